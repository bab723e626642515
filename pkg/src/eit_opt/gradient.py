"""Adjoint-based cost gradients and finite-difference consistency checks.

For the discrete P1/P0 model the adjoint construction reproduces the
exact derivative of the discrete cost: the conductivity gradient density
on element e is -(grad u . grad psi)|_e and the voltage gradient combines
current residuals with unit-voltage sensitivity solves. The check
routines compare one-sided finite differences of the cost against the
adjoint directional derivative over a logarithmic step grid; a ratio
plateau at 1 certifies consistency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import FemContext, SmoothingConfig, SparseSpdSystem, solve_spd
from .mesh import DiskMesh, ElectrodeLayout
from .model import CostBreakdown, MeasurementSet, rotate_voltages, rotated_position
from .pca import PcaBasis, project_gradient, to_physical

DEFAULT_EPSILONS = tuple(10.0 ** -k for k in range(1, 13))


@dataclass(frozen=True)
class GradientPair:
    """Gradient of a cost with respect to both controls.

    ``d_sigma`` is the per-element gradient density; pairing it with a
    conductivity variation uses element-area weights. ``d_voltages`` is
    the plain Euclidean gradient with respect to the electrode voltages.
    Either component may be None when it was not requested.
    """

    d_sigma: np.ndarray | None
    d_voltages: np.ndarray | None


@dataclass(frozen=True)
class GradientCheckReport:
    """Finite-difference over adjoint ratio across a step grid."""

    epsilons: np.ndarray
    ratios: np.ndarray
    plateau_span: int
    tol: float


class Workspace:
    """Shared discretization state for repeated cost/gradient evaluations."""

    def __init__(self, mesh: DiskMesh, layout: ElectrodeLayout, cfg: SmoothingConfig):
        self.ctx = FemContext(mesh, layout, cfg)

    def bind(self, sigma_values: np.ndarray) -> "BoundConductivity":
        return BoundConductivity(self.ctx, np.asarray(sigma_values, dtype=float))


class BoundConductivity:
    """System matrix and cached sensitivity solves at one conductivity."""

    def __init__(self, ctx: FemContext, sigma_values: np.ndarray):
        self.ctx = ctx
        self.sigma_values = sigma_values
        self.matrix = ctx.system_matrix(sigma_values)
        self._units: np.ndarray | None = None

    def solve(self, electrode_data: np.ndarray) -> np.ndarray:
        rhs = self.ctx.boundary.rhs(electrode_data, self.ctx.layout.impedances)
        return solve_spd(SparseSpdSystem(matrix=self.matrix, rhs=rhs))

    def unit_solutions(self) -> np.ndarray:
        """Solutions for each unit voltage vector, shape (n_vertices, m)."""
        if self._units is None:
            m = self.ctx.layout.count
            cols = [self.solve(np.eye(m)[k]) for k in range(m)]
            self._units = np.column_stack(cols)
        return self._units

    def sensitivity_matrix(self) -> np.ndarray:
        """d(current at l)/d(voltage at k), the discrete current map."""
        bop = self.ctx.boundary
        z = self.ctx.layout.impedances
        return (np.diag(bop.arc_measures) - bop.load @ self.unit_solutions()) / z[:, None]

    def currents(self, u: np.ndarray, voltages: np.ndarray) -> np.ndarray:
        return self.ctx.boundary.currents(u, voltages, self.ctx.layout.impedances)


def evaluate(
    bound: BoundConductivity,
    voltages: np.ndarray,
    data: MeasurementSet,
    beta: float,
    *,
    rotation: bool,
    want_sigma_gradient: bool = False,
    want_voltage_gradient: bool = False,
) -> tuple[CostBreakdown, GradientPair | None]:
    """Cost and (optionally) gradient components sharing one set of solves."""
    ctx = bound.ctx
    geo = ctx.elements
    tri = ctx.mesh.triangles
    voltages = np.asarray(voltages, dtype=float)
    m = ctx.layout.count
    n_patterns = data.pattern_count if rotation else 1
    terms = np.empty((n_patterns, m))
    density = np.zeros(ctx.mesh.n_elements) if want_sigma_gradient else None
    residual_pull = np.zeros(m) if want_voltage_gradient else None

    for j in range(1, n_patterns + 1):
        vj = rotate_voltages(voltages, j) if rotation else voltages
        u = bound.solve(vj)
        residual = bound.currents(u, vj) - data.currents[j - 1]
        terms[j - 1] = residual**2
        if want_sigma_gradient:
            psi = bound.solve(-2.0 * residual)
            gu = geo.field_gradients(u, tri)
            gp = geo.field_gradients(psi, tri)
            density -= np.einsum("tk,tk->t", gu, gp)
        if want_voltage_gradient:
            pull = 2.0 * (bound.sensitivity_matrix().T @ residual)
            if rotation:
                positions = np.array([rotated_position(k, j, m) for k in range(m)])
                residual_pull += pull[positions]
            else:
                residual_pull += pull

    reg = 0.0
    if beta != 0.0:
        diff = voltages - data.u_star
        reg = float(beta) * float(diff @ diff)
    cost = CostBreakdown(total=float(terms.sum()) + reg, mismatch_terms=terms, reg_term=reg)
    if not (want_sigma_gradient or want_voltage_gradient):
        return cost, None
    d_voltages = residual_pull
    if want_voltage_gradient and beta != 0.0:
        d_voltages = d_voltages + 2.0 * beta * (voltages - data.u_star)
    return cost, GradientPair(d_sigma=density, d_voltages=d_voltages)


def single_pattern_gradient(
    sigma,
    voltages: np.ndarray,
    currents: np.ndarray,
    u_star: np.ndarray,
    beta: float,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    cfg: SmoothingConfig,
) -> GradientPair:
    """Gradient of the one-pattern cost with respect to (sigma, U).

    Costs one state solve, one adjoint solve, and m unit-voltage solves.
    """
    data = MeasurementSet(u_star=u_star, currents=np.atleast_2d(currents))
    ws = Workspace(mesh, layout, cfg)
    _, pair = evaluate(
        ws.bind(_values(sigma)), voltages, data, beta,
        rotation=False, want_sigma_gradient=True, want_voltage_gradient=True,
    )
    return pair


def rotation_gradient(
    sigma,
    voltages: np.ndarray,
    data: MeasurementSet,
    beta: float,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    cfg: SmoothingConfig,
) -> GradientPair:
    """Gradient of the rotation-augmented cost with respect to (sigma, U)."""
    ws = Workspace(mesh, layout, cfg)
    _, pair = evaluate(
        ws.bind(_values(sigma)), voltages, data, beta,
        rotation=True, want_sigma_gradient=True, want_voltage_gradient=True,
    )
    return pair


def _values(sigma) -> np.ndarray:
    return np.asarray(getattr(sigma, "values", sigma), dtype=float)


def _plateau(ratios: np.ndarray, tol: float) -> int:
    best = run = 0
    for r in ratios:
        run = run + 1 if np.isfinite(r) and abs(r - 1.0) <= tol else 0
        best = max(best, run)
    return best


def check_sigma_gradient(
    sigma,
    voltages: np.ndarray,
    data: MeasurementSet,
    beta: float,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    cfg: SmoothingConfig,
    delta_sigma: np.ndarray,
    epsilons=DEFAULT_EPSILONS,
    tol: float = 1e-2,
    *,
    rotation: bool = False,
    gradient_sign: float = 1.0,
) -> GradientCheckReport:
    """Ratio of finite-difference to adjoint directional derivatives in sigma.

    The directional derivative pairs the gradient density with the
    perturbation through element-area weights. ``gradient_sign`` is a
    diagnostic hook: flipping it must collapse the plateau to -1.
    """
    sigma_values = _values(sigma)
    delta = np.asarray(delta_sigma, dtype=float)
    ws = Workspace(mesh, layout, cfg)
    bound = ws.bind(sigma_values)
    cost0, pair = evaluate(bound, voltages, data, beta, rotation=rotation, want_sigma_gradient=True)
    areas = ws.ctx.elements.areas
    pairing = gradient_sign * float(areas @ (pair.d_sigma * delta))
    scale = float(np.linalg.norm(areas * pair.d_sigma)) * float(np.linalg.norm(delta))
    if abs(pairing) <= 1e-14 * max(1.0, scale):
        raise ValueError("directional derivative is numerically zero; pick another perturbation")
    eps = np.asarray(epsilons, dtype=float)
    ratios = np.empty_like(eps)
    for i, e in enumerate(eps):
        cost_eps, _ = evaluate(ws.bind(sigma_values + e * delta), voltages, data, beta, rotation=rotation)
        ratios[i] = (cost_eps.total - cost0.total) / (e * pairing)
    return GradientCheckReport(epsilons=eps, ratios=ratios, plateau_span=_plateau(ratios, tol), tol=tol)


def check_reduced_gradient(
    basis: PcaBasis,
    xi: np.ndarray,
    voltages: np.ndarray,
    data: MeasurementSet,
    beta: float,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    cfg: SmoothingConfig,
    delta_xi: np.ndarray,
    epsilons=DEFAULT_EPSILONS,
    tol: float = 1e-2,
    *,
    rotation: bool = False,
) -> GradientCheckReport:
    """Same ratio check for the reduced-space gradient.

    The chain rule holds for the coefficient-space gradient, so the
    density is multiplied by element areas before projection and the
    reduced pairing is plain Euclidean.
    """
    xi = np.asarray(xi, dtype=float)
    delta = np.asarray(delta_xi, dtype=float)
    ws = Workspace(mesh, layout, cfg)
    sigma0 = to_physical(xi, basis)
    cost0, pair = evaluate(ws.bind(sigma0), voltages, data, beta, rotation=rotation, want_sigma_gradient=True)
    areas = ws.ctx.elements.areas
    reduced = project_gradient(areas * pair.d_sigma, basis)
    pairing = float(reduced @ delta)
    if abs(pairing) <= 1e-14 * max(1.0, float(np.linalg.norm(reduced) * np.linalg.norm(delta))):
        raise ValueError("directional derivative is numerically zero; pick another perturbation")
    eps = np.asarray(epsilons, dtype=float)
    ratios = np.empty_like(eps)
    for i, e in enumerate(eps):
        cost_eps, _ = evaluate(ws.bind(to_physical(xi + e * delta, basis)), voltages, data, beta, rotation=rotation)
        ratios[i] = (cost_eps.total - cost0.total) / (e * pairing)
    return GradientCheckReport(epsilons=eps, ratios=ratios, plateau_span=_plateau(ratios, tol), tol=tol)


def check_voltage_gradient(
    sigma,
    voltages: np.ndarray,
    data: MeasurementSet,
    beta: float,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    cfg: SmoothingConfig,
    eps: float,
    deltas=None,
    *,
    rotation: bool = False,
) -> np.ndarray:
    """Per-electrode finite-difference over adjoint ratios at a fixed step.

    Component l perturbs only voltage l. Entries where the gradient
    component is below 1e-14 in magnitude are flagged as NaN.
    """
    voltages = np.asarray(voltages, dtype=float)
    m = voltages.size
    deltas = np.ones(m) if deltas is None else np.asarray(deltas, dtype=float)
    ws = Workspace(mesh, layout, cfg)
    bound = ws.bind(_values(sigma))
    cost0, pair = evaluate(bound, voltages, data, beta, rotation=rotation, want_voltage_gradient=True)
    ratios = np.empty(m)
    for l in range(m):
        if abs(pair.d_voltages[l]) < 1e-14:
            ratios[l] = np.nan
            continue
        perturbed = voltages.copy()
        perturbed[l] += eps * deltas[l]
        cost_eps, _ = evaluate(bound, perturbed, data, beta, rotation=rotation)
        ratios[l] = (cost_eps.total - cost0.total) / (eps * pair.d_voltages[l] * deltas[l])
    return ratios


def write_gradient_check(path, report: GradientCheckReport) -> None:
    """Two-column (step, ratio) text file with a plateau summary line."""
    lines = ["# epsilon ratio"]
    for e, r in zip(report.epsilons, report.ratios):
        lines.append(f"{e:.17g} {r:.17g}")
    lines.append(f"# plateau_decades {report.plateau_span} tol {report.tol:.17g}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
