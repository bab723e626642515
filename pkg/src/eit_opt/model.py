"""Cost functionals, electrode currents, and rotation-augmented data.

Three nested problems share one mismatch core: the squared deviation of
the electrode currents produced by a candidate state from a target
pattern. ``mismatch_cost`` fits voltages at known conductivity,
``single_pattern_cost`` adds a Tikhonov voltage term for the one-pattern
inverse problem, and ``rotation_cost`` sums the mismatch over all cyclic
rotations of the voltage vector against a rotation-augmented measurement
set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import FemContext, SmoothingConfig, solve_spd, SparseSpdSystem
from .fields import require_zero_sum
from .mesh import DiskMesh, ElectrodeLayout

__all__ = [
    "CostBreakdown",
    "MeasurementSet",
    "electrode_currents",
    "mismatch_cost",
    "single_pattern_cost",
    "rotation_cost",
    "rotate_voltages",
    "rotated_position",
    "synthesize_rotation_data",
    "solution_norms",
    "write_measurements",
    "read_measurements",
]


@dataclass(frozen=True)
class MeasurementSet:
    """Measured voltages plus one or m target current patterns.

    ``currents[j - 1]`` is the pattern associated with the j-th cyclic
    rotation of the measured voltages. A single-row set carries data for
    the one-pattern problems.
    """

    u_star: np.ndarray | None
    currents: np.ndarray

    def __post_init__(self):
        currents = np.ascontiguousarray(np.atleast_2d(self.currents), dtype=float)
        currents.flags.writeable = False
        object.__setattr__(self, "currents", currents)
        if self.u_star is not None:
            u = require_zero_sum(self.u_star, "measured voltages")
            u.flags.writeable = False
            object.__setattr__(self, "u_star", u)
        m = currents.shape[1]
        if currents.shape[0] not in (1, m):
            raise ValueError(f"need 1 or {m} current patterns, got {currents.shape[0]}")
        for j, row in enumerate(currents, start=1):
            require_zero_sum(row, f"current pattern {j}")

    @property
    def pattern_count(self) -> int:
        return int(self.currents.shape[0])

    @property
    def electrode_count(self) -> int:
        return int(self.currents.shape[1])


@dataclass(frozen=True)
class CostBreakdown:
    """Cost value split into per-(pattern, electrode) mismatch and penalty."""

    total: float
    mismatch_terms: np.ndarray
    reg_term: float

    @property
    def mismatch(self) -> float:
        return float(self.mismatch_terms.sum())


def electrode_currents(
    u: np.ndarray,
    voltages: np.ndarray,
    layout: ElectrodeLayout,
    mesh: DiskMesh,
    cfg: SmoothingConfig,
) -> np.ndarray:
    """Currents int chi_l (U_l - u)/Z_l ds drawn through each electrode."""
    ctx = FemContext(mesh, layout, cfg)
    return ctx.boundary.currents(np.asarray(u, float), np.asarray(voltages, float), layout.impedances)


def rotate_voltages(voltages: np.ndarray, j: int) -> np.ndarray:
    """The j-th cyclic rotation (1-based; j = 1 is the identity)."""
    v = np.asarray(voltages, dtype=float)
    m = v.size
    if not 1 <= j <= m:
        raise ValueError(f"rotation index must be in 1..{m}, got {j}")
    return np.roll(v, -(j - 1))


def rotated_position(k: int, j: int, m: int) -> int:
    """Position (0-based) of voltage component k in the j-th rotation.

    ``rotate_voltages(U, j)[rotated_position(k, j, m)] == U[k]``; rotation
    indices are 1-based, electrode indices 0-based.
    """
    if not 0 <= k < m:
        raise ValueError(f"electrode index must be in 0..{m - 1}, got {k}")
    if not 1 <= j <= m:
        raise ValueError(f"rotation index must be in 1..{m}, got {j}")
    return (k - (j - 1)) % m


def _reg_term(voltages, u_star, beta: float) -> float:
    if beta == 0.0:
        return 0.0
    diff = np.asarray(voltages, float) - np.asarray(u_star, float)
    return float(beta) * float(diff @ diff)


def _pattern_cost(ctx: FemContext, matrix, voltages: np.ndarray, currents: np.ndarray) -> np.ndarray:
    rhs = ctx.boundary.rhs(voltages, ctx.layout.impedances)
    u = solve_spd(SparseSpdSystem(matrix=matrix, rhs=rhs))
    measured = ctx.boundary.currents(u, voltages, ctx.layout.impedances)
    return (measured - currents) ** 2


def mismatch_cost(
    sigma,
    voltages: np.ndarray,
    currents: np.ndarray,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    cfg: SmoothingConfig,
) -> CostBreakdown:
    """Pure current mismatch at fixed conductivity (no penalty term)."""
    ctx = FemContext(mesh, layout, cfg)
    matrix = ctx.system_matrix(_values(sigma))
    terms = _pattern_cost(ctx, matrix, np.asarray(voltages, float), np.asarray(currents, float))
    return CostBreakdown(total=float(terms.sum()), mismatch_terms=terms[None, :], reg_term=0.0)


def single_pattern_cost(
    sigma,
    voltages: np.ndarray,
    currents: np.ndarray,
    u_star: np.ndarray,
    beta: float,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    cfg: SmoothingConfig,
) -> CostBreakdown:
    """Current mismatch plus beta * |U - U*|^2 for one pattern."""
    ctx = FemContext(mesh, layout, cfg)
    matrix = ctx.system_matrix(_values(sigma))
    terms = _pattern_cost(ctx, matrix, np.asarray(voltages, float), np.asarray(currents, float))
    reg = _reg_term(voltages, u_star, beta)
    return CostBreakdown(total=float(terms.sum()) + reg, mismatch_terms=terms[None, :], reg_term=reg)


def rotation_cost(
    sigma,
    voltages: np.ndarray,
    data: MeasurementSet,
    beta: float,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    cfg: SmoothingConfig,
) -> CostBreakdown:
    """Mismatch summed over cyclic voltage rotations plus the penalty.

    Rotation j applies ``rotate_voltages(U, j)`` as electrode data and
    compares the resulting currents with ``data.currents[j - 1]``. All
    rotations share one system matrix; only the right-hand side changes.
    """
    ctx = FemContext(mesh, layout, cfg)
    matrix = ctx.system_matrix(_values(sigma))
    v = np.asarray(voltages, dtype=float)
    terms = np.empty_like(data.currents)
    for j in range(1, data.pattern_count + 1):
        terms[j - 1] = _pattern_cost(ctx, matrix, rotate_voltages(v, j), data.currents[j - 1])
    reg = _reg_term(voltages, data.u_star, beta)
    return CostBreakdown(total=float(terms.sum()) + reg, mismatch_terms=terms, reg_term=reg)


def synthesize_rotation_data(
    sigma_true,
    u_star: np.ndarray,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    cfg: SmoothingConfig,
) -> MeasurementSet:
    """Measure the currents produced by every rotation of the true voltages.

    One state solve per rotation at the true conductivity; the first
    pattern corresponds to the unrotated measurement itself.
    """
    u_star = require_zero_sum(u_star, "measured voltages")
    ctx = FemContext(mesh, layout, cfg)
    matrix = ctx.system_matrix(_values(sigma_true))
    m = layout.count
    currents = np.empty((m, m))
    for j in range(1, m + 1):
        vj = rotate_voltages(u_star, j)
        rhs = ctx.boundary.rhs(vj, layout.impedances)
        u = solve_spd(SparseSpdSystem(matrix=matrix, rhs=rhs))
        currents[j - 1] = ctx.boundary.currents(u, vj, layout.impedances)
    return MeasurementSet(u_star=u_star, currents=currents)


def solution_norms(sigma, sigma_true, voltages: np.ndarray, u_star: np.ndarray, mesh: DiskMesh):
    """Relative errors of the two controls against their references.

    The conductivity error is the area-weighted L2 norm of the difference
    over the norm of the reference; the voltage error is Euclidean.
    """
    s = _values(sigma)
    st = _values(sigma_true)
    areas = mesh.triangle_areas()
    denom = float(np.sqrt(areas @ (st * st)))
    if denom == 0.0:
        raise ZeroDivisionError("reference conductivity has zero norm")
    n_sigma = float(np.sqrt(areas @ ((s - st) ** 2))) / denom
    u_ref = float(np.linalg.norm(u_star))
    if u_ref == 0.0:
        raise ZeroDivisionError("reference voltages have zero norm")
    n_u = float(np.linalg.norm(np.asarray(voltages, float) - np.asarray(u_star, float))) / u_ref
    return n_sigma, n_u


def _values(sigma) -> np.ndarray:
    values = getattr(sigma, "values", sigma)
    return np.asarray(values, dtype=float)


def write_measurements(path, data: MeasurementSet) -> None:
    """Serialize a measurement set as a plain-text table.

    First line: electrode count followed by the measured voltages; then
    one ``j l value`` row per (pattern, electrode), 17 significant digits.
    """
    if data.u_star is None:
        raise ValueError("cannot serialize a measurement set without measured voltages")
    lines = [str(data.electrode_count) + " " + " ".join(f"{v:.17g}" for v in data.u_star)]
    for j in range(data.pattern_count):
        for l in range(data.electrode_count):
            lines.append(f"{j + 1} {l + 1} {data.currents[j, l]:.17g}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_measurements(path) -> MeasurementSet:
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.readline().split()
        m = int(tokens[0])
        u_star = np.array([float(t) for t in tokens[1 : m + 1]])
        rows = [line.split() for line in fh if line.strip()]
    if not rows:
        raise ValueError(f"{path}: no current rows")
    n_patterns = max(int(r[0]) for r in rows)
    currents = np.full((n_patterns, m), np.nan)
    for j_s, l_s, val in rows:
        currents[int(j_s) - 1, int(l_s) - 1] = float(val)
    if np.any(np.isnan(currents)):
        raise ValueError(f"{path}: incomplete current table")
    return MeasurementSet(u_star=u_star, currents=currents)
