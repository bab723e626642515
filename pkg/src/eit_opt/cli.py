"""Command-line driver for the three-stage reconstruction experiment.

Subcommands: ``stage1`` fits boundary voltages to the target current
pattern at the true conductivity (the synthetic measurement), ``stage2``
runs the one-pattern inverse problem, ``stage3`` synthesizes the
rotation-augmented data set and inverts it over the PCA-reduced space,
``validate`` runs the gradient and model consistency suite, plus
``pca-build``, ``sweep-beta``, and ``export`` utilities.

Exit codes: 0 success, 2 configuration/input error, 3 linear-solver
failure, 4 optimizer failure, 5 validation failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .fem import SolverError
from .fields import require_zero_sum
from .gradient import (
    Workspace,
    check_reduced_gradient,
    check_sigma_gradient,
    check_voltage_gradient,
    write_gradient_check,
)
from .mesh import build_disk_mesh, rasterize_phantom, tag_electrodes, write_vtk
from .model import (
    MeasurementSet,
    electrode_currents,
    mismatch_cost,
    solution_norms,
    synthesize_rotation_data,
    write_measurements,
)
from .optimizer import OptimizerError, run_descent, sweep_beta, write_run_csv
from .pca import (
    SplitMix64,
    build_basis,
    generate_realizations,
    save_basis,
    to_physical,
    to_reduced,
    variance_curve,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_OPTIMIZER = 4
EXIT_VALIDATION = 5


class ValidationFailure(RuntimeError):
    pass


def _thread_cap() -> int:
    raw = os.environ.get("EIT_OPT_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"EIT_OPT_THREADS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"EIT_OPT_THREADS must be at least 1, got {cap}")
    return cap


def write_vector(path, values) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in np.asarray(values, dtype=float):
            fh.write(f"{v:.17g}\n")


def read_vector(path) -> np.ndarray:
    try:
        with open(path, "r", encoding="ascii") as fh:
            return np.array([float(line) for line in fh if line.strip()])
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None


class Problem:
    """Meshes, layout, fields, and data derived from one configuration."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.layout = config.layout()
        self.mesh = tag_electrodes(
            build_disk_mesh(config.mesh_radius, config.mesh_boundary_vertices), self.layout
        )
        n_data = config.data_boundary_vertices
        if n_data and n_data != config.mesh_boundary_vertices:
            self.data_mesh = tag_electrodes(build_disk_mesh(config.mesh_radius, n_data), self.layout)
        else:
            self.data_mesh = self.mesh
        self.smoothing = config.opt.smoothing
        self.sigma_true = rasterize_phantom(self.mesh, config.phantom(), config.opt.bounds)
        self.sigma_true_data = (
            self.sigma_true
            if self.data_mesh is self.mesh
            else rasterize_phantom(self.data_mesh, config.phantom(), config.opt.bounds)
        )
        self.currents = config.current_pattern()
        self.initial_voltages = config.initial_voltage_vector()

    def initial_sigma(self) -> np.ndarray:
        return np.full(self.mesh.n_elements, self.config.initial_sigma)

    def build_pca_basis(self):
        real = generate_realizations(
            self.mesh,
            self.config.pca_realizations,
            self.config.seed,
            self.config.phantom_background,
            self.config.phantom_inclusion,
        )
        return real, build_basis(real, self.config.opt.variance_target)


def _solve_stage1(problem: Problem):
    data = MeasurementSet(u_star=None, currents=problem.currents[None, :])
    record = run_descent(
        "voltage",
        problem.sigma_true_data,
        problem.initial_voltages,
        data,
        problem.config.opt,
        problem.data_mesh,
        problem.layout,
        sigma_true=problem.sigma_true_data,
    )
    return record


def cmd_stage1(config: ExperimentConfig, out: Path) -> int:
    problem = Problem(config)
    record = _solve_stage1(problem)
    u_star = record.final_voltages
    write_vector(out / "u_star.txt", u_star)
    write_run_csv(out / "stage1_trace.csv", record)
    from .fem import solve_state

    u = solve_state(problem.data_mesh, problem.sigma_true_data, problem.layout, u_star, problem.smoothing)
    achieved = electrode_currents(u, u_star, problem.layout, problem.data_mesh, problem.smoothing)
    errors = achieved - problem.currents
    with open(out / "stage1_currents.txt", "w", encoding="ascii") as fh:
        fh.write("# electrode target achieved error\n")
        for l in range(problem.layout.count):
            fh.write(f"{l + 1} {problem.currents[l]:.17g} {achieved[l]:.17g} {errors[l]:.17g}\n")
    max_err = float(np.abs(errors).max())
    print(f"stage1: {record.reason} after {record.iterations} iterations, cost {record.final_cost:.6e}")
    print(f"stage1: closed-loop current error {max_err:.3e} A (limit 1e-3)")
    if max_err > 1e-3:
        raise OptimizerError(f"closed-loop current error {max_err:.3e} A exceeds 1e-3 A")
    return EXIT_OK


def _load_u_star(args, out: Path) -> np.ndarray:
    path = Path(args.u_star) if args.u_star else out / "u_star.txt"
    if not path.exists():
        raise ConfigError(f"measured voltages not found at {path}; run stage1 first or pass --u-star")
    return require_zero_sum(read_vector(path), "measured voltages")


def _write_reconstruction(problem: Problem, record, out: Path, prefix: str, u_star) -> tuple[float, float]:
    write_vector(out / f"{prefix}_sigma.txt", record.final_sigma)
    write_vtk(out / f"{prefix}_sigma.vtk", problem.mesh, record.final_sigma)
    write_vector(out / f"{prefix}_u.txt", record.final_voltages)
    write_run_csv(out / f"{prefix}_trace.csv", record)
    n_sigma, n_u = solution_norms(
        record.final_sigma, problem.sigma_true, record.final_voltages, u_star, problem.mesh
    )
    with open(out / f"{prefix}_norms.txt", "w", encoding="ascii") as fh:
        fh.write(f"N_sigma {n_sigma:.17g}\nN_U {n_u:.17g}\n")
    return n_sigma, n_u


def cmd_stage2(config: ExperimentConfig, out: Path, u_star: np.ndarray) -> int:
    problem = Problem(config)
    data = MeasurementSet(u_star=u_star, currents=problem.currents[None, :])
    record = run_descent(
        "single",
        problem.initial_sigma(),
        problem.initial_voltages,
        data,
        config.opt,
        problem.mesh,
        problem.layout,
        sigma_true=problem.sigma_true,
        u_star_ref=u_star,
    )
    n_sigma, n_u = _write_reconstruction(problem, record, out, "stage2", u_star)
    print(f"stage2: {record.reason} after {record.iterations} iterations, cost {record.final_cost:.6e}")
    print(f"stage2: N_sigma {n_sigma:.6f}, N_U {n_u:.6f}")
    return EXIT_OK


def detection_report(problem: Problem, sigma_values: np.ndarray) -> dict:
    """Mean reconstructed conductivity inside each true inclusion vs outside."""
    centroids = problem.mesh.centroids()
    outside = np.ones(problem.mesh.n_elements, dtype=bool)
    entries = []
    for x, y, r in problem.config.phantom_disks:
        inside = (centroids[:, 0] - x) ** 2 + (centroids[:, 1] - y) ** 2 <= r * r
        outside &= ~inside
        entries.append({"center": (x, y), "radius": r, "inside_mean": float(sigma_values[inside].mean())})
    outside_mean = float(sigma_values[outside].mean())
    for entry in entries:
        entry["margin"] = entry["inside_mean"] - outside_mean
    return {"outside_mean": outside_mean, "inclusions": entries}


def write_detection(path, report: dict) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"outside_mean {report['outside_mean']:.17g}\n")
        fh.write("# inclusion cx cy r inside_mean margin\n")
        for i, entry in enumerate(report["inclusions"], start=1):
            (x, y), r = entry["center"], entry["radius"]
            fh.write(f"{i} {x:.17g} {y:.17g} {r:.17g} {entry['inside_mean']:.17g} {entry['margin']:.17g}\n")


def cmd_stage3(config: ExperimentConfig, out: Path, u_star: np.ndarray) -> int:
    problem = Problem(config)
    data = synthesize_rotation_data(
        problem.sigma_true_data, u_star, problem.data_mesh, problem.layout, problem.smoothing
    )
    write_measurements(out / "stage3_measurements.txt", data)
    basis = None
    if config.opt.use_pca:
        _, basis = problem.build_pca_basis()
        save_basis(
            out / "stage3_basis.txt",
            basis,
            count=config.pca_realizations,
            seed=config.seed,
            variance_target=config.opt.variance_target,
        )
        print(f"stage3: PCA basis with {basis.n_xi} components ({basis.variance_fraction:.2f}% variance)")
    record = run_descent(
        "rotation",
        problem.initial_sigma(),
        problem.initial_voltages,
        data,
        config.opt,
        problem.mesh,
        problem.layout,
        basis=basis,
        sigma_true=problem.sigma_true,
        u_star_ref=u_star,
    )
    n_sigma, n_u = _write_reconstruction(problem, record, out, "stage3", u_star)
    report = detection_report(problem, record.final_sigma)
    write_detection(out / "stage3_detection.txt", report)
    print(f"stage3: {record.reason} after {record.iterations} iterations, cost {record.final_cost:.6e}")
    print(f"stage3: N_sigma {n_sigma:.6f}, N_U {n_u:.6f}")
    for i, entry in enumerate(report["inclusions"], start=1):
        print(f"stage3: inclusion {i} margin {entry['margin']:+.4f}")
    return EXIT_OK


def cmd_pca_build(config: ExperimentConfig, out: Path, variance_target: float | None) -> int:
    if variance_target is not None:
        config = replace(config, opt=replace(config.opt, variance_target=variance_target))
    problem = Problem(config)
    realizations, basis = problem.build_pca_basis()
    save_basis(
        out / "basis.txt",
        basis,
        count=config.pca_realizations,
        seed=config.seed,
        variance_target=config.opt.variance_target,
    )
    curve = variance_curve(basis.spectrum)
    with open(out / "variance.txt", "w", encoding="ascii") as fh:
        fh.write("# k r_v_percent\n")
        for k, rv in enumerate(curve, start=1):
            fh.write(f"{k} {rv:.17g}\n")
    print(f"pca-build: {realizations.count} realizations, {basis.n_xi} components retained")
    print(f"pca-build: accumulated variance {basis.variance_fraction:.4f}%")
    return EXIT_OK


def cmd_sweep_beta(config: ExperimentConfig, out: Path, u_star: np.ndarray, grid) -> int:
    problem = Problem(config)
    data = synthesize_rotation_data(
        problem.sigma_true_data, u_star, problem.data_mesh, problem.layout, problem.smoothing
    )
    basis = None
    if config.opt.use_pca:
        _, basis = problem.build_pca_basis()
    rows = sweep_beta(
        problem.initial_sigma(),
        problem.initial_voltages,
        data,
        config.opt,
        problem.mesh,
        problem.layout,
        grid,
        basis=basis,
        sigma_true=problem.sigma_true,
        u_star_ref=u_star,
    )
    with open(out / "sweep.csv", "w", encoding="ascii") as fh:
        fh.write("beta,cost,mismatch,N_sigma,N_U,iterations,reason,error\n")
        for row in rows:
            fh.write(
                f"{row['beta']:.17g},{row['cost']:.17g},{row['mismatch']:.17g},"
                f"{row['n_sigma']:.17g},{row['n_u']:.17g},{row['iterations']},"
                f"{row['reason']},{row['error']}\n"
            )
    for row in rows:
        print(
            f"sweep: beta {row['beta']:.4g} -> cost {row['cost']:.6e}, "
            f"N_sigma {row['n_sigma']:.6f}, N_U {row['n_u']:.6f} ({row['reason']})"
        )
    return EXIT_OK


def cmd_export(config: ExperimentConfig, out: Path, sigma_path: str, name: str) -> int:
    problem = Problem(config)
    values = read_vector(sigma_path)
    if values.size != problem.mesh.n_elements:
        raise ConfigError(
            f"{sigma_path}: expected {problem.mesh.n_elements} element values, got {values.size}"
        )
    target = out / (Path(sigma_path).stem + ".vtk")
    write_vtk(target, problem.mesh, values, name)
    print(f"export: wrote {target}")
    return EXIT_OK


def _check(lines: list[str], name: str, ok: bool, detail: str) -> bool:
    status = "PASS" if ok else "FAIL"
    lines.append(f"{status} {name}: {detail}")
    print(lines[-1])
    return ok


def cmd_validate(config: ExperimentConfig, out: Path, corrupt_gradient_sign: bool = False) -> int:
    """Consistency suite: gradient ratio checks, reciprocity, conservation,
    reduced-space round trips, and the convexity identity."""
    problem = Problem(config)
    mesh, layout, cfg = problem.mesh, problem.layout, problem.smoothing
    lines: list[str] = []
    ok = True
    sign = -1.0 if corrupt_gradient_sign else 1.0

    record = _solve_stage1(problem)
    u_star = record.final_voltages
    single = MeasurementSet(u_star=u_star, currents=problem.currents[None, :])
    rotation = synthesize_rotation_data(
        problem.sigma_true_data, u_star, problem.data_mesh, problem.layout, cfg
    )
    sigma_ini = problem.initial_sigma()
    voltages_ini = problem.initial_voltages
    beta = config.opt.beta

    rng = SplitMix64(config.seed ^ 0x5DEECE66D)
    delta_sigma = np.array([rng.next_float() - 0.5 for _ in range(mesh.n_elements)])

    rep = check_sigma_gradient(
        sigma_ini, voltages_ini, single, beta, mesh, layout, cfg, delta_sigma, gradient_sign=sign
    )
    write_gradient_check(out / "ratio_sigma_single.txt", rep)
    ok &= _check(lines, "gradient-ratio sigma single", rep.plateau_span >= 4, f"plateau {rep.plateau_span} decades")

    rep = check_sigma_gradient(
        sigma_ini, voltages_ini, rotation, beta, mesh, layout, cfg, delta_sigma,
        rotation=True, gradient_sign=sign,
    )
    write_gradient_check(out / "ratio_sigma_rotation.txt", rep)
    ok &= _check(lines, "gradient-ratio sigma rotation", rep.plateau_span >= 4, f"plateau {rep.plateau_span} decades")

    _, basis = problem.build_pca_basis()
    xi = to_reduced(sigma_ini, basis)
    delta_xi = np.array([rng.next_float() - 0.5 for _ in range(basis.n_xi)])
    rep = check_reduced_gradient(basis, xi, voltages_ini, single, beta, mesh, layout, cfg, delta_xi)
    write_gradient_check(out / "ratio_xi_single.txt", rep)
    ok &= _check(lines, "gradient-ratio reduced single", rep.plateau_span >= 4, f"plateau {rep.plateau_span} decades")

    rep = check_reduced_gradient(
        basis, xi, voltages_ini, rotation, beta, mesh, layout, cfg, delta_xi, rotation=True
    )
    write_gradient_check(out / "ratio_xi_rotation.txt", rep)
    ok &= _check(lines, "gradient-ratio reduced rotation", rep.plateau_span >= 4, f"plateau {rep.plateau_span} decades")

    ratios = check_voltage_gradient(sigma_ini, voltages_ini, single, beta, mesh, layout, cfg, eps=1e-6)
    finite = np.all(np.isfinite(ratios))
    worst = float(np.nanmax(np.abs(ratios - 1.0))) if finite else np.inf
    ok &= _check(lines, "gradient-ratio voltages", finite and worst <= 1e-2, f"max |ratio-1| {worst:.3e}")

    ws = Workspace(mesh, layout, cfg)
    bound = ws.bind(sigma_ini)
    sens = bound.sensitivity_matrix()
    asym = float(np.abs(sens - sens.T).max())
    ok &= _check(lines, "reciprocity", asym <= 1e-8, f"max asymmetry {asym:.3e}")

    u = bound.solve(voltages_ini)
    currents = bound.currents(u, voltages_ini)
    defect = abs(float(currents.sum())) / max(float(np.abs(currents).sum()), 1e-30)
    ok &= _check(lines, "charge conservation", defect <= 1e-8, f"relative defect {defect:.3e}")

    xi_random = np.array([rng.next_float() - 0.5 for _ in range(basis.n_xi)])
    roundtrip = to_reduced(to_physical(xi_random, basis), basis)
    rt_err = float(np.abs(roundtrip - xi_random).max())
    ok &= _check(lines, "pca roundtrip", rt_err <= 1e-10, f"max error {rt_err:.3e}")

    worst_rel = 0.0
    for _ in range(10):
        u1 = project_voltages_vec(np.array([rng.next_float() - 0.5 for _ in range(layout.count)]))
        u2 = project_voltages_vec(np.array([rng.next_float() - 0.5 for _ in range(layout.count)]))
        alpha = rng.next_float()
        worst_rel = max(
            worst_rel,
            _convexity_defect(problem, bound, u1, u2, alpha),
        )
    ok &= _check(lines, "convexity identity", worst_rel <= 1e-8, f"max relative defect {worst_rel:.3e}")

    with open(out / "validate_report.txt", "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    if not ok:
        raise ValidationFailure("one or more consistency checks failed")
    return EXIT_OK


def project_voltages_vec(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def _convexity_defect(problem: Problem, bound, u1, u2, alpha) -> float:
    """Relative defect of the mixed-cost identity for the voltage problem."""
    layout, cfg, mesh = problem.layout, problem.smoothing, problem.mesh
    currents = problem.currents
    cost = lambda v: mismatch_cost(bound.sigma_values, v, currents, mesh, layout, cfg).total
    mixed = cost(alpha * u1 + (1.0 - alpha) * u2)
    f1, f2 = cost(u1), cost(u2)
    field1 = bound.solve(u1)
    field2 = bound.solve(u2)
    correction = 0.0
    for l in range(layout.count):
        bop = bound.ctx.boundary
        integral = (u1[l] - u2[l]) * bop.arc_measures[l] - bop.load[l] @ (field1 - field2)
        correction += integral**2 / layout.impedances[l] ** 2
    rhs = alpha * f1 + (1.0 - alpha) * f2 - alpha * (1.0 - alpha) * correction
    scale = max(abs(mixed), abs(f1), abs(f2), 1e-30)
    return abs(mixed - rhs) / scale


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eit-opt",
        description="Electrode-current conductivity imaging: synthetic experiment driver.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_ustar in [
        ("stage1", False),
        ("stage2", True),
        ("stage3", True),
        ("validate", False),
        ("pca-build", False),
        ("sweep-beta", True),
        ("export", False),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to a key-value config file (defaults used when omitted)")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--beta", type=float, help="override the regularization weight")
        p.add_argument("--rv", type=float, help="override the PCA retained-variance target, percent")
        if needs_ustar:
            p.add_argument("--u-star", help="measured-voltages file (default <out>/u_star.txt)")
        if name == "sweep-beta":
            p.add_argument(
                "--betas",
                default="0,1e-4,1e-2,0.3162,10",
                help="comma-separated regularization weights",
            )
        if name == "export":
            p.add_argument("--sigma", required=True, help="per-element conductivity text file")
            p.add_argument("--name", default="sigma", help="VTK scalar name")
        if name == "validate":
            p.add_argument("--corrupt-gradient-sign", action="store_true", help=argparse.SUPPRESS)
    return parser


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    opt = config.opt
    if args.beta is not None:
        opt = replace(opt, beta=args.beta)
    if getattr(args, "rv", None) is not None:
        opt = replace(opt, variance_target=args.rv)
    if opt is not config.opt:
        config = replace(config, opt=opt)
    if args.out:
        config = replace(config, output_dir=args.out)
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _thread_cap()
        config = _resolve_config(args)
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "stage1":
            return cmd_stage1(config, out)
        if args.command == "stage2":
            return cmd_stage2(config, out, _load_u_star(args, out))
        if args.command == "stage3":
            return cmd_stage3(config, out, _load_u_star(args, out))
        if args.command == "validate":
            return cmd_validate(config, out, corrupt_gradient_sign=args.corrupt_gradient_sign)
        if args.command == "pca-build":
            return cmd_pca_build(config, out, args.rv)
        if args.command == "sweep-beta":
            grid = [float(tok) for tok in args.betas.split(",") if tok.strip()]
            return cmd_sweep_beta(config, out, _load_u_star(args, out), grid)
        if args.command == "export":
            return cmd_export(config, out, args.sigma, args.name)
        raise AssertionError(args.command)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except OptimizerError as err:
        print(f"optimizer error: {err}", file=sys.stderr)
        return EXIT_OPTIMIZER
    except ValidationFailure as err:
        print(f"validation failed: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
