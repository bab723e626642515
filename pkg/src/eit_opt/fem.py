"""P1 finite elements for the complete-electrode conductivity model.

The weak form couples a conductivity-weighted stiffness term with Robin
terms on the electrode arcs,

    B[u, v] = int_Q sigma grad(u).grad(v) dx
            + sum_l (1/Z_l) int_dQ chi_l u v ds,

where ``chi_l`` is a (possibly smoothed) indicator of electrode l's arc.
Boundary integrals are evaluated in the angle parameter (ds = r dtheta)
with a two-point Gauss rule per edge, the edge being split at the arc
endpoints and arc center so the rule is exact for the sharp indicator and
resolves steep smoothed profiles. Assembly and every electrode integral
share this one quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fields import ConductivityField
from .mesh import TWO_PI, DiskMesh, ElectrodeLayout, wrap_angle

_GAUSS_OFFSET = 0.5 / math.sqrt(3.0)


class SolverError(RuntimeError):
    """Linear solve failed; carries the final relative residual."""

    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SmoothingConfig:
    """Regularity knobs, both disabled at zero.

    bc_eps : float
        Width of the tanh mollification of the electrode indicator;
        0 keeps the sharp mixed boundary conditions.
    sobolev_ell : float
        Diffusion scale of the gradient smoother; 0 returns gradients
        unchanged.
    """

    bc_eps: float = 0.0
    sobolev_ell: float = 0.0

    def __post_init__(self):
        if self.bc_eps < 0.0 or self.sobolev_ell < 0.0:
            raise ValueError("smoothing parameters must be non-negative")


def electrode_weight(theta, l: int, layout: ElectrodeLayout, eps: float):
    """Smoothed indicator of electrode l's arc at angle(s) ``theta``.

    For eps > 0 this is 1/2 - tanh((|d| - w)/eps)/2 with d the wrapped
    angular distance to the arc center; for eps = 0 it is the sharp
    indicator (1 inside, 0 outside, 1/2 exactly at the arc endpoints).
    """
    if eps < 0.0:
        raise ValueError("smoothing width must be non-negative")
    dist = np.abs(wrap_angle(np.asarray(theta, dtype=float) - layout.centers[l]))
    w = layout.half_width
    if eps == 0.0:
        out = np.where(dist < w, 1.0, 0.0)
        out = np.where(dist == w, 0.5, out)
    else:
        out = 0.5 - 0.5 * np.tanh((dist - w) / eps)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ElementGeometry:
    """Per-element quantities of the P1 discretization."""

    areas: np.ndarray
    grads: np.ndarray  # (t, 3, 2), gradient of each local basis function
    k_unit: np.ndarray  # (t, 3, 3), elemental stiffness for sigma = 1
    rows: np.ndarray
    cols: np.ndarray

    def field_gradients(self, nodal: np.ndarray, triangles: np.ndarray) -> np.ndarray:
        """Per-element (constant) gradient of a P1 nodal field, shape (t, 2)."""
        return np.einsum("ti,tik->tk", nodal[triangles], self.grads)


def element_geometry(mesh: DiskMesh) -> ElementGeometry:
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    areas = 0.5 * det
    if np.any(areas <= 0.0):
        raise ValueError("mesh contains non-positively oriented triangles")
    b = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], axis=1)
    c = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], axis=1)
    grads = np.stack([b, c], axis=2) / det[:, None, None]
    k_unit = areas[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
    k_unit = 0.5 * (k_unit + k_unit.transpose(0, 2, 1))  # exact symmetry, BLAS kernels drift by ulps
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).reshape(-1)
    cols = np.tile(tri, (1, 3)).reshape(-1)
    return ElementGeometry(areas=areas, grads=grads, k_unit=k_unit, rows=rows, cols=cols)


@dataclass(frozen=True)
class BoundaryOperator:
    """Electrode boundary quadrature, aggregated once per configuration.

    arc_measures[l] = int chi_l ds, load[l, i] = int chi_l phi_i ds, and
    ``robin_mass`` is sum_l (1/Z_l) int chi_l phi_i phi_j ds.
    """

    arc_measures: np.ndarray
    load: np.ndarray
    robin_mass: sp.csr_matrix

    def currents(self, nodal: np.ndarray, voltages: np.ndarray, impedances: np.ndarray) -> np.ndarray:
        """Electrode currents int chi_l (U_l - u)/Z_l ds for a solved state."""
        return (voltages * self.arc_measures - self.load @ nodal) / impedances

    def rhs(self, voltages: np.ndarray, impedances: np.ndarray) -> np.ndarray:
        return (np.asarray(voltages, dtype=float) / impedances) @ self.load


def _edge_quadrature(span: tuple[float, float], breakpoints: np.ndarray):
    """Gauss points and weights over an edge span split at breakpoints."""
    a, b = span
    inside = breakpoints[(breakpoints > a + 1e-15) & (breakpoints < b - 1e-15)]
    knots = np.concatenate([[a], np.sort(inside), [b]])
    widths = np.diff(knots)
    keep = widths > 0.0
    mids = 0.5 * (knots[:-1] + knots[1:])[keep]
    widths = widths[keep]
    pts = np.concatenate([mids - _GAUSS_OFFSET * widths, mids + _GAUSS_OFFSET * widths])
    wts = np.concatenate([0.5 * widths, 0.5 * widths])
    return pts, wts


def boundary_operator(mesh: DiskMesh, layout: ElectrodeLayout, cfg: SmoothingConfig) -> BoundaryOperator:
    n = mesh.n_vertices
    m = layout.count
    arc = np.zeros(m)
    load = np.zeros((m, n))
    mass_rows: list[np.ndarray] = []
    mass_cols: list[np.ndarray] = []
    mass_data: list[np.ndarray] = []
    for l in range(m):
        center = layout.centers[l]
        base = np.array([center - layout.half_width, center + layout.half_width, center])
        breakpoints = (base[:, None] + TWO_PI * np.array([-1.0, 0.0, 1.0])[None, :]).ravel()
        inv_z = 1.0 / layout.impedances[l]
        for e in range(mesh.edge_angles.shape[0]):
            a, b = mesh.edge_angles[e]
            pts, wts = _edge_quadrature((a, b), breakpoints)
            chi = electrode_weight(pts, l, layout, cfg.bc_eps)
            weights = wts * chi * mesh.radius
            if not np.any(weights):
                continue
            t = (pts - a) / (b - a)
            phi = np.stack([1.0 - t, t], axis=1)
            v = mesh.edge_vertices[e]
            arc[l] += weights.sum()
            load[l, v[0]] += weights @ phi[:, 0]
            load[l, v[1]] += weights @ phi[:, 1]
            local = np.einsum("q,qi,qj->ij", weights, phi, phi) * inv_z
            local = 0.5 * (local + local.T)
            mass_rows.append(np.repeat(v, 2))
            mass_cols.append(np.tile(v, 2))
            mass_data.append(local.ravel())
    if mass_data:
        robin = sp.coo_matrix(
            (np.concatenate(mass_data), (np.concatenate(mass_rows), np.concatenate(mass_cols))),
            shape=(n, n),
        ).tocsr()
    else:
        robin = sp.csr_matrix((n, n))
    return BoundaryOperator(arc_measures=arc, load=load, robin_mass=robin)


@dataclass(frozen=True)
class SparseSpdSystem:
    """Assembled symmetric positive-definite system."""

    matrix: sp.csr_matrix
    rhs: np.ndarray


class FemContext:
    """Reusable discretization state for one (mesh, layout, smoothing) triple.

    Building the boundary operator is the expensive part; drivers that
    solve many systems on one configuration should share a context.
    """

    def __init__(self, mesh: DiskMesh, layout: ElectrodeLayout, cfg: SmoothingConfig):
        self.mesh = mesh
        self.layout = layout
        self.cfg = cfg
        self.elements = element_geometry(mesh)
        self.boundary = boundary_operator(mesh, layout, cfg)

    def stiffness(self, sigma_values: np.ndarray) -> sp.csr_matrix:
        data = (self.elements.k_unit * sigma_values[:, None, None]).reshape(-1)
        n = self.mesh.n_vertices
        return sp.coo_matrix((data, (self.elements.rows, self.elements.cols)), shape=(n, n)).tocsr()

    def system_matrix(self, sigma_values: np.ndarray) -> sp.csr_matrix:
        if np.any(sigma_values <= 0.0):
            raise ValueError("conductivity must be strictly positive")
        return self.stiffness(sigma_values) + self.boundary.robin_mass

    def assemble(self, sigma_values: np.ndarray, voltages: np.ndarray) -> SparseSpdSystem:
        return SparseSpdSystem(
            matrix=self.system_matrix(sigma_values),
            rhs=self.boundary.rhs(voltages, self.layout.impedances),
        )

    def solve(self, sigma_values: np.ndarray, voltages: np.ndarray) -> np.ndarray:
        return solve_spd(self.assemble(sigma_values, voltages))


def _sigma_values(sigma) -> np.ndarray:
    if isinstance(sigma, ConductivityField):
        return sigma.values
    return np.asarray(sigma, dtype=float)


def assemble(mesh: DiskMesh, sigma, layout: ElectrodeLayout, voltages, cfg: SmoothingConfig) -> SparseSpdSystem:
    """Assemble the state system for electrode voltage data ``voltages``."""
    return FemContext(mesh, layout, cfg).assemble(_sigma_values(sigma), np.asarray(voltages, dtype=float))


def solve_spd(system: SparseSpdSystem, rtol: float = 1e-12) -> np.ndarray:
    """Conjugate gradients with Jacobi preconditioning.

    Iterates until the relative residual drops below ``rtol`` (cap of 20n
    iterations) and raises :class:`SolverError` with the final residual on
    non-convergence.
    """
    a = system.matrix
    b = np.asarray(system.rhs, dtype=float)
    n = b.size
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros(n)
    diag = a.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("system matrix has a non-positive diagonal entry")
    inv_diag = 1.0 / diag
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    max_iters = 20 * n
    res = 1.0
    for _ in range(max_iters):
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise SolverError("matrix is not positive definite along a search direction", res)
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        res = float(np.linalg.norm(r)) / norm_b
        if res <= rtol:
            return x
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"conjugate gradients did not converge: relative residual {res:.3e}", res)


def solve_state(mesh: DiskMesh, sigma, layout: ElectrodeLayout, voltages, cfg: SmoothingConfig) -> np.ndarray:
    """Solve the conductivity equation for given electrode voltages."""
    return solve_spd(assemble(mesh, sigma, layout, voltages, cfg))


def adjoint_data(
    boundary: BoundaryOperator,
    layout: ElectrodeLayout,
    nodal: np.ndarray,
    voltages: np.ndarray,
    currents: np.ndarray,
) -> np.ndarray:
    """Electrode data of the adjoint problem, -2x the current residuals."""
    measured = boundary.currents(nodal, np.asarray(voltages, dtype=float), layout.impedances)
    return -2.0 * (measured - np.asarray(currents, dtype=float))


def solve_adjoint(
    mesh: DiskMesh,
    sigma,
    layout: ElectrodeLayout,
    u: np.ndarray,
    voltages,
    currents,
    cfg: SmoothingConfig,
) -> np.ndarray:
    """Solve the adjoint problem for a solved state ``u``.

    Shares the state operator (it is self-adjoint for scalar conductivity);
    only the electrode data changes, so a zero current residual gives an
    identically zero adjoint.
    """
    ctx = FemContext(mesh, layout, cfg)
    g = adjoint_data(ctx.boundary, layout, u, voltages, currents)
    return solve_adjoint_with(ctx, ctx.system_matrix(_sigma_values(sigma)), g)


def solve_adjoint_with(ctx: FemContext, matrix: sp.csr_matrix, electrode_data: np.ndarray) -> np.ndarray:
    rhs = ctx.boundary.rhs(electrode_data, ctx.layout.impedances)
    return solve_spd(SparseSpdSystem(matrix=matrix, rhs=rhs))


def solve_unit_voltage(mesh: DiskMesh, sigma, layout: ElectrodeLayout, k: int, cfg: SmoothingConfig) -> np.ndarray:
    """Solve the state problem with the k-th unit voltage vector (0-based).

    The unit vector is applied as-is; the zero-sum gauge is intentionally
    not enforced because these solutions represent voltage sensitivities.
    """
    voltages = np.zeros(layout.count)
    voltages[k] = 1.0
    return solve_state(mesh, sigma, layout, voltages, cfg)


def electrode_integral(field, l: int, layout: ElectrodeLayout, mesh: DiskMesh, cfg: SmoothingConfig) -> float:
    """Integral of a nodal field (or constant) against electrode l's weight."""
    bop = boundary_operator(mesh, layout, cfg)
    if np.isscalar(field):
        return float(field) * float(bop.arc_measures[l])
    return float(bop.load[l] @ np.asarray(field, dtype=float))


def _mass_matrix(mesh: DiskMesh, geo: ElementGeometry) -> sp.csr_matrix:
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    data = (geo.areas[:, None, None] * local[None, :, :]).reshape(-1)
    n = mesh.n_vertices
    return sp.coo_matrix((data, (geo.rows, geo.cols)), shape=(n, n)).tocsr()


def sobolev_smooth(mesh: DiskMesh, element_values: np.ndarray, ell: float) -> np.ndarray:
    """Low-pass filter a per-element field by solving (I - ell*Laplace)g = f.

    Uses homogeneous Neumann conditions on a nodal representation of the
    field (area-weighted averaging to vertices, solve, resample at element
    centroids). ``ell = 0`` returns the input unchanged; the area-weighted
    mean is preserved for every ell.
    """
    if ell < 0.0:
        raise ValueError("smoothing scale must be non-negative")
    g = np.asarray(element_values, dtype=float)
    if ell == 0.0:
        return g.copy()
    geo = element_geometry(mesh)
    n = mesh.n_vertices
    lumped = np.zeros(n)
    weighted = np.zeros(n)
    thirds = geo.areas / 3.0
    for local in range(3):
        np.add.at(lumped, mesh.triangles[:, local], thirds)
        np.add.at(weighted, mesh.triangles[:, local], thirds * g)
    nodal = weighted / lumped
    mass = _mass_matrix(mesh, geo)
    stiff = sp.coo_matrix(
        (geo.k_unit.reshape(-1), (geo.rows, geo.cols)), shape=(n, n)
    ).tocsr()
    smoothed = solve_spd(SparseSpdSystem(matrix=mass + ell * stiff, rhs=mass @ nodal))
    return smoothed[mesh.triangles].mean(axis=1)
