"""Projected descent over (conductivity, voltages) with optional knobs.

The loop follows the projective gradient recipe: solve states, check the
relative-decrease termination criteria, compute the adjoint gradient,
optionally smooth it and project it into the reduced PCA space, build a
descent direction (steepest or limited-memory quasi-Newton with periodic
restarts), pick the step by backtracking Armijo search on the projected
trial point, then project voltages onto the zero-sum hyperplane and
conductivity into its box.

Conductivity steps subtract the gradient *density*, which is steepest
descent in the area-weighted inner product; the quasi-Newton recursion
uses that same inner product so that an empty history reproduces the
density step exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fem import SmoothingConfig, SolverError, sobolev_smooth
from .gradient import Workspace, evaluate
from .mesh import DiskMesh, ElectrodeLayout
from .model import MeasurementSet, solution_norms
from .pca import PcaBasis, project_gradient, to_physical, to_reduced

PROBLEMS = ("voltage", "single", "rotation")


class OptimizerError(RuntimeError):
    pass


class LineSearchError(OptimizerError):
    pass


@dataclass(frozen=True)
class OptConfig:
    """Optimization settings.

    ``lbfgs_memory = 0`` gives the plain projective gradient loop;
    ``restart_interval = r > 0`` clears the quasi-Newton history every r
    iterations (r = 1 degrades to steepest descent). ``bounds`` is the
    admissible conductivity box.
    """

    beta: float = 0.0
    use_pca: bool = False
    variance_target: float = 85.0
    sobolev_ell: float = 0.0
    bc_eps: float = 0.0
    tol: float = 1e-6
    max_iters: int = 250
    lbfgs_memory: int = 0
    restart_interval: int = 0
    bounds: tuple[float, float] = (0.1, 0.6)
    armijo_c1: float = 1e-4
    armijo_shrink: float = 0.5
    armijo_grow: float = 2.0

    def __post_init__(self):
        if self.beta < 0.0:
            raise ValueError("regularization weight must be non-negative")
        if not 0.0 < self.variance_target <= 100.0:
            raise ValueError("variance target must lie in (0, 100]")
        if self.sobolev_ell < 0.0 or self.bc_eps < 0.0:
            raise ValueError("smoothing parameters must be non-negative")
        if self.tol <= 0.0:
            raise ValueError("termination tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("iteration cap must be at least 1")
        if self.lbfgs_memory < 0 or self.restart_interval < 0:
            raise ValueError("quasi-Newton settings must be non-negative")
        lo, hi = self.bounds
        if not 0.0 < lo < hi:
            raise ValueError(f"conductivity bounds must satisfy 0 < lo < hi, got ({lo}, {hi})")
        if not 0.0 < self.armijo_c1 < 1.0:
            raise ValueError("Armijo constant must lie in (0, 1)")
        if not 0.0 < self.armijo_shrink < 1.0:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.armijo_grow < 1.0:
            raise ValueError("warm-start growth factor must be at least 1")

    @property
    def smoothing(self) -> SmoothingConfig:
        return SmoothingConfig(bc_eps=self.bc_eps, sobolev_ell=self.sobolev_ell)


def project_sigma(values: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    """Clamp per-element conductivity into the admissible box."""
    return np.clip(np.asarray(values, dtype=float), bounds[0], bounds[1])


def project_voltages(values: np.ndarray) -> np.ndarray:
    """Subtract the mean, projecting onto the zero-sum hyperplane."""
    v = np.asarray(values, dtype=float)
    return v - v.mean()


def line_search(
    cost0: float,
    slope: float,
    trial,
    *,
    c1: float = 1e-4,
    shrink: float = 0.5,
    alpha_init: float = 1.0,
    max_halvings: int = 40,
):
    """Backtracking Armijo search.

    ``trial(alpha)`` evaluates the cost at the (already projected) trial
    point ``x - alpha * d``; ``slope`` is the directional derivative
    <g, d>, which must be positive for a descent direction. Returns the
    accepted ``(alpha, cost)``; failure after ``max_halvings`` shrinks
    signals an inconsistent gradient.
    """
    if not slope > 0.0:
        raise LineSearchError(f"not a descent direction: directional derivative {slope:.3e}")
    alpha = float(alpha_init)
    for _ in range(max_halvings + 1):
        cost = float(trial(alpha))
        if cost <= cost0 - c1 * alpha * slope:
            return alpha, cost
        alpha *= shrink
    raise LineSearchError(
        f"no acceptable step after {max_halvings} halvings (cost {cost0:.6e}, slope {slope:.3e})"
    )


@dataclass
class _LbfgsHistory:
    """Two-loop recursion in a diagonally weighted inner product."""

    weights: np.ndarray
    memory: int
    pairs: list = field(default_factory=list)

    def dot(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(self.weights * a * b))

    def clear(self) -> None:
        self.pairs.clear()

    def push(self, s: np.ndarray, y: np.ndarray) -> None:
        if self.memory == 0:
            return
        ys = self.dot(y, s)
        if ys <= 1e-12 * math.sqrt(self.dot(s, s) * self.dot(y, y)):
            return
        self.pairs.append((s, y, ys))
        if len(self.pairs) > self.memory:
            self.pairs.pop(0)

    def direction(self, gradient: np.ndarray) -> np.ndarray:
        if not self.pairs:
            return gradient.copy()
        q = gradient.copy()
        alphas = []
        for s, y, ys in reversed(self.pairs):
            a = self.dot(s, q) / ys
            alphas.append(a)
            q -= a * y
        s, y, ys = self.pairs[-1]
        r = (ys / self.dot(y, y)) * q
        for (s, y, ys), a in zip(self.pairs, reversed(alphas)):
            b = self.dot(y, r) / ys
            r += (a - b) * s
        return r


@dataclass(frozen=True)
class IterationRow:
    iteration: int
    cost: float
    mismatch: float
    reg: float
    n_sigma: float
    n_u: float
    alpha: float
    gnorm_sigma: float
    gnorm_u: float


@dataclass
class RunRecord:
    """Per-iteration trace plus the final controls and termination reason."""

    rows: list[IterationRow]
    final_sigma: np.ndarray
    final_voltages: np.ndarray
    reason: str
    sigma_trace: list[np.ndarray] | None = None
    voltage_trace: list[np.ndarray] | None = None

    @property
    def final_cost(self) -> float:
        return self.rows[-1].cost

    @property
    def iterations(self) -> int:
        return self.rows[-1].iteration


CSV_HEADER = "iter,cost,mismatch,reg,N_sigma,N_U,alpha,gnorm_sigma,gnorm_U"


def write_run_csv(path, record: RunRecord) -> None:
    lines = [CSV_HEADER]
    for r in record.rows:
        lines.append(
            f"{r.iteration},{r.cost:.17g},{r.mismatch:.17g},{r.reg:.17g},"
            f"{r.n_sigma:.17g},{r.n_u:.17g},{r.alpha:.17g},{r.gnorm_sigma:.17g},{r.gnorm_u:.17g}"
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def run_descent(
    problem: str,
    sigma0,
    voltages0: np.ndarray,
    data: MeasurementSet,
    cfg: OptConfig,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    *,
    basis: PcaBasis | None = None,
    sigma_true=None,
    u_star_ref: np.ndarray | None = None,
    trace_controls: bool = False,
) -> RunRecord:
    """Minimize one of the three problems by projected descent.

    ``problem`` selects the controls and cost: "voltage" fits electrode
    voltages at fixed conductivity against one current pattern, "single"
    iterates (sigma, U) against one pattern, "rotation" iterates
    (sigma, U) against the rotation-augmented measurement set. With
    ``cfg.use_pca`` the conductivity control is the reduced coordinate
    vector of ``basis``.

    Solver and line-search failures terminate the run and are reported in
    the record's ``reason`` together with the last accepted state.
    """
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}, expected one of {PROBLEMS}")
    rotation = problem == "rotation"
    if rotation and data.pattern_count != layout.count:
        raise ValueError("rotation problem needs one current pattern per electrode")
    beta = 0.0 if problem == "voltage" else cfg.beta
    if beta != 0.0 and data.u_star is None:
        raise ValueError("penalty term requires measured voltages in the data set")
    use_pca = cfg.use_pca and problem != "voltage"
    if use_pca and basis is None:
        raise ValueError("use_pca requires a prebuilt basis")

    ws = Workspace(mesh, layout, cfg.smoothing)
    areas = ws.ctx.elements.areas
    sigma_vals = project_sigma(np.asarray(getattr(sigma0, "values", sigma0), dtype=float), cfg.bounds)
    voltages = project_voltages(np.asarray(voltages0, dtype=float))
    xi = to_reduced(sigma_vals, basis) if use_pca else None
    if use_pca:
        sigma_vals = to_physical(xi, basis, cfg.bounds)

    if use_pca:
        ctrl_weights = np.concatenate([np.ones(basis.n_xi), np.ones(layout.count)])
    elif problem == "voltage":
        ctrl_weights = np.ones(layout.count)
    else:
        ctrl_weights = np.concatenate([areas, np.ones(layout.count)])
    history = _LbfgsHistory(weights=ctrl_weights, memory=cfg.lbfgs_memory)

    sigma_ref = None if sigma_true is None else np.asarray(getattr(sigma_true, "values", sigma_true), float)

    def norms(s_vals, u_vals):
        if sigma_ref is None or u_star_ref is None:
            return math.nan, math.nan
        return solution_norms(s_vals, sigma_ref, u_vals, u_star_ref, mesh)

    def pack(sig_ctrl, u_ctrl):
        if problem == "voltage":
            return u_ctrl.copy()
        return np.concatenate([sig_ctrl, u_ctrl])

    def unpack(z):
        if problem == "voltage":
            return None, z
        return z[: -layout.count], z[-layout.count :]

    def realize(z):
        """Projected physical controls for a packed trial point."""
        sig_ctrl, u_ctrl = unpack(z)
        u_proj = project_voltages(u_ctrl)
        if problem == "voltage":
            return None, sigma_vals, u_proj
        if use_pca:
            return sig_ctrl, to_physical(sig_ctrl, basis, cfg.bounds), u_proj
        clamped = project_sigma(sig_ctrl, cfg.bounds)
        return clamped, clamped, u_proj

    rows: list[IterationRow] = []
    sigma_trace: list[np.ndarray] = []
    voltage_trace: list[np.ndarray] = []
    reason = "max_iterations"
    bound = ws.bind(sigma_vals)
    ctrl = xi if use_pca else sigma_vals
    prev_cost = None
    alpha_prev = None
    pending = None  # (packed control, packed gradient) awaiting the next gradient

    def log_row(n, cost, alpha, g_sigma, g_u):
        n_s, n_u = norms(sigma_vals, voltages)
        gn_sigma = math.nan if g_sigma is None else float(np.sqrt(np.sum(areas * g_sigma**2)))
        gn_u = float(np.linalg.norm(g_u))
        rows.append(
            IterationRow(
                iteration=n,
                cost=cost.total,
                mismatch=cost.mismatch,
                reg=cost.reg_term,
                n_sigma=n_s,
                n_u=n_u,
                alpha=alpha,
                gnorm_sigma=gn_sigma,
                gnorm_u=gn_u,
            )
        )
        if trace_controls:
            sigma_trace.append(sigma_vals.copy())
            voltage_trace.append(voltages.copy())

    for n in range(cfg.max_iters + 1):
        try:
            cost, pair = evaluate(
                bound,
                voltages,
                data,
                beta,
                rotation=rotation,
                want_sigma_gradient=problem != "voltage",
                want_voltage_gradient=True,
            )
        except SolverError as err:
            reason = f"solver_failure: {err}"
            break

        density = pair.d_sigma
        if density is not None and cfg.sobolev_ell > 0.0:
            density = sobolev_smooth(mesh, density, cfg.sobolev_ell)

        def feasible(vec: np.ndarray) -> np.ndarray:
            """Zero the conductivity components the box projection cancels."""
            if problem == "voltage" or use_pca:
                return vec
            out = vec.copy()
            sig_part = out[: -layout.count]
            lo, hi = cfg.bounds
            sig_part[(sigma_vals <= lo) & (sig_part > 0.0)] = 0.0
            sig_part[(sigma_vals >= hi) & (sig_part < 0.0)] = 0.0
            return out

        if problem == "voltage":
            grad_full = pair.d_voltages.copy()
        elif use_pca:
            grad_full = np.concatenate([project_gradient(areas * density, basis), pair.d_voltages])
        else:
            grad_full = np.concatenate([density, pair.d_voltages])
        grad = feasible(grad_full)

        gnorm = math.sqrt(history.dot(grad, grad))
        if n == 0:
            gnorm0 = gnorm
        if prev_cost is not None:
            rel = abs(cost.total - prev_cost) / max(abs(prev_cost), 1e-30)
            if rel < cfg.tol:
                reason = "converged"
                log_row(n, cost, 0.0, density, pair.d_voltages)
                break
        if gnorm <= 1e-12 * max(gnorm0, 1e-30):
            reason = "stationary"
            log_row(n, cost, 0.0, density, pair.d_voltages)
            break
        if n == cfg.max_iters:
            reason = "max_iterations"
            log_row(n, cost, 0.0, density, pair.d_voltages)
            break

        z = pack(ctrl, voltages)
        if pending is not None:
            history.push(z - pending[0], grad - pending[1])
        if cfg.restart_interval > 0 and n > 0 and n % cfg.restart_interval == 0:
            history.clear()

        direction = feasible(history.direction(grad))
        slope = history.dot(grad_full, direction)
        if not slope > 0.0:
            direction = grad.copy()
            slope = history.dot(grad_full, direction)

        def trial(alpha):
            _, s_vals, u_vals = realize(z - alpha * direction)
            trial_bound = bound if problem == "voltage" else ws.bind(s_vals)
            c, _ = evaluate(trial_bound, u_vals, data, beta, rotation=rotation)
            return c.total

        # quasi-Newton directions carry their natural scale: try the unit
        # step first; the doubling warm start applies to gradient steps only
        if history.pairs:
            alpha_init = 1.0
        else:
            alpha_init = 1.0 if alpha_prev is None else cfg.armijo_grow * alpha_prev
        try:
            alpha, _ = line_search(
                cost.total,
                slope,
                trial,
                c1=cfg.armijo_c1,
                shrink=cfg.armijo_shrink,
                alpha_init=alpha_init,
            )
        except LineSearchError as err:
            reason = f"line_search_failure: {err}"
            log_row(n, cost, 0.0, density, pair.d_voltages)
            break
        except SolverError as err:
            reason = f"solver_failure: {err}"
            log_row(n, cost, 0.0, density, pair.d_voltages)
            break

        log_row(n, cost, alpha, density, pair.d_voltages)
        pending = (z, grad)
        ctrl, sigma_vals, voltages = realize(z - alpha * direction)
        if problem == "voltage":
            ctrl = None
        else:
            bound = ws.bind(sigma_vals)
        alpha_prev = alpha
        prev_cost = cost.total

    return RunRecord(
        rows=rows,
        final_sigma=sigma_vals.copy(),
        final_voltages=voltages.copy(),
        reason=reason,
        sigma_trace=sigma_trace if trace_controls else None,
        voltage_trace=voltage_trace if trace_controls else None,
    )


def sweep_beta(
    sigma0,
    voltages0: np.ndarray,
    data: MeasurementSet,
    cfg: OptConfig,
    mesh: DiskMesh,
    layout: ElectrodeLayout,
    beta_grid,
    *,
    basis: PcaBasis | None = None,
    sigma_true=None,
    u_star_ref: np.ndarray | None = None,
) -> list[dict]:
    """Run the rotation problem once per regularization weight.

    Every run starts from the same initial controls. Failures are
    recorded in the row's ``error`` field and the sweep continues.
    """
    rows = []
    for beta in beta_grid:
        entry = {"beta": float(beta)}
        try:
            record = run_descent(
                "rotation",
                sigma0,
                voltages0,
                data,
                replace(cfg, beta=float(beta)),
                mesh,
                layout,
                basis=basis,
                sigma_true=sigma_true,
                u_star_ref=u_star_ref,
            )
            last = record.rows[-1]
            entry.update(
                cost=last.cost,
                mismatch=last.mismatch,
                n_sigma=last.n_sigma,
                n_u=last.n_u,
                iterations=last.iteration,
                reason=record.reason,
                error="",
            )
        except (OptimizerError, SolverError, ValueError) as err:
            entry.update(
                cost=math.nan, mismatch=math.nan, n_sigma=math.nan, n_u=math.nan,
                iterations=0, reason="failed", error=str(err),
            )
        rows.append(entry)
    return rows
