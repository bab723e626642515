"""Experiment configuration: flat ``section.key = value`` text files.

Every key is optional; the defaults reproduce the benchmark disk setup
(16 electrodes on a 0.1 m disk, the four-inclusion phantom, the fixed
current pattern, alternating unit initial voltages). Unknown keys and
malformed values fail with a line diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fields import require_zero_sum
from .mesh import ElectrodeLayout, PhantomSpec
from .optimizer import OptConfig


class ConfigError(ValueError):
    pass


DEFAULT_CURRENTS = (
    -0.03, 0.02, 0.03, -0.07, 0.06, -0.01, -0.04, 0.02,
    0.04, 0.03, -0.05, 0.04, 0.03, -0.05, 0.02, -0.04,
)
DEFAULT_INCLUSIONS = (
    (0.0, 0.05, 0.03),
    (-0.075, -0.01, 0.0063),
    (-0.015, -0.02, 0.0122),
    (0.025, -0.055, 0.0235),
)


@dataclass(frozen=True)
class ExperimentConfig:
    mesh_radius: float = 0.1
    mesh_boundary_vertices: int = 96
    data_boundary_vertices: int = 0  # 0 = generate data on the inversion mesh
    electrode_count: int = 16
    electrode_half_width: float = 0.12
    electrode_impedance: float = 0.1
    phantom_background: float = 0.2
    phantom_inclusion: float = 0.4
    phantom_disks: tuple[tuple[float, float, float], ...] = DEFAULT_INCLUSIONS
    currents: tuple[float, ...] = DEFAULT_CURRENTS
    initial_sigma: float = 0.3
    initial_voltages: tuple[float, ...] = tuple([-1.0, 1.0] * 8)
    opt: OptConfig = field(default_factory=lambda: OptConfig(lbfgs_memory=20, max_iters=1000))
    pca_realizations: int = 500
    seed: int = 271828
    output_dir: str = "out"

    def layout(self) -> ElectrodeLayout:
        return ElectrodeLayout.equispaced(
            self.electrode_count, self.electrode_half_width, self.electrode_impedance
        )

    def phantom(self) -> PhantomSpec:
        return PhantomSpec(
            background=self.phantom_background,
            inclusion_value=self.phantom_inclusion,
            inclusions=self.phantom_disks,
        )

    def current_pattern(self) -> np.ndarray:
        return require_zero_sum(np.array(self.currents), "current pattern")

    def initial_voltage_vector(self) -> np.ndarray:
        return require_zero_sum(np.array(self.initial_voltages), "initial voltages")


_SCHEMA = {
    "mesh.radius": ("mesh_radius", "float"),
    "mesh.boundary_vertices": ("mesh_boundary_vertices", "int"),
    "data.boundary_vertices": ("data_boundary_vertices", "int"),
    "layout.count": ("electrode_count", "int"),
    "layout.half_width": ("electrode_half_width", "float"),
    "layout.impedance": ("electrode_impedance", "float"),
    "phantom.background": ("phantom_background", "float"),
    "phantom.inclusion": ("phantom_inclusion", "float"),
    "phantom.disks": ("phantom_disks", "disks"),
    "currents": ("currents", "floats"),
    "initial.sigma": ("initial_sigma", "float"),
    "initial.voltages": ("initial_voltages", "floats"),
    "pca.realizations": ("pca_realizations", "int"),
    "seed": ("seed", "int"),
    "output.dir": ("output_dir", "str"),
    "opt.beta": ("beta", "float"),
    "opt.use_pca": ("use_pca", "bool"),
    "opt.variance_target": ("variance_target", "float"),
    "opt.sobolev_ell": ("sobolev_ell", "float"),
    "opt.bc_eps": ("bc_eps", "float"),
    "opt.tol": ("tol", "float"),
    "opt.max_iters": ("max_iters", "int"),
    "opt.lbfgs_memory": ("lbfgs_memory", "int"),
    "opt.restart_interval": ("restart_interval", "int"),
    "opt.bounds": ("bounds", "pair"),
    "opt.armijo_c1": ("armijo_c1", "float"),
    "opt.armijo_shrink": ("armijo_shrink", "float"),
    "opt.armijo_grow": ("armijo_grow", "float"),
}
_OPT_KEYS = {key for key, (attr, _) in _SCHEMA.items() if key.startswith("opt.")}


def _parse_value(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "str":
        return raw
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "floats":
        return tuple(float(t) for t in raw.replace(",", " ").split())
    if kind == "pair":
        values = tuple(float(t) for t in raw.replace(",", " ").split())
        if len(values) != 2:
            raise ValueError(f"expected two numbers, got {raw!r}")
        return values
    if kind == "disks":
        disks = []
        for chunk in raw.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = [float(t) for t in chunk.replace(",", " ").split()]
            if len(parts) != 3:
                raise ValueError(f"each disk needs x, y, radius; got {chunk!r}")
            disks.append(tuple(parts))
        return tuple(disks)
    raise AssertionError(kind)


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat key-value text into a validated configuration."""
    plain: dict[str, object] = {}
    opt_kwargs: dict[str, object] = {}
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        attr, kind = _SCHEMA[key]
        try:
            value = _parse_value(kind, raw)
        except ValueError as err:
            raise ConfigError(f"line {lineno}: key {key!r}: {err}") from None
        if key in _OPT_KEYS:
            opt_kwargs[attr] = value
        else:
            plain[attr] = value
    try:
        base_opt = OptConfig(lbfgs_memory=20, max_iters=1000)
        opt = replace(base_opt, **opt_kwargs) if opt_kwargs else base_opt
        config = ExperimentConfig(opt=opt, **plain)
        config.layout()
        config.phantom()
        config.current_pattern()
        voltages = config.initial_voltage_vector()
    except (ValueError, TypeError) as err:
        raise ConfigError(str(err)) from None
    if len(config.currents) != config.electrode_count:
        raise ConfigError(
            f"key 'currents': expected {config.electrode_count} values, got {len(config.currents)}"
        )
    if voltages.size != config.electrode_count:
        raise ConfigError(
            f"key 'initial.voltages': expected {config.electrode_count} values, got {voltages.size}"
        )
    if config.mesh_boundary_vertices < 12 or config.mesh_boundary_vertices % 4 != 0:
        raise ConfigError("key 'mesh.boundary_vertices': must be >= 12 and divisible by 4")
    if config.data_boundary_vertices and (
        config.data_boundary_vertices < 12 or config.data_boundary_vertices % 4 != 0
    ):
        raise ConfigError("key 'data.boundary_vertices': must be 0 or >= 12 and divisible by 4")
    if config.pca_realizations < 2:
        raise ConfigError("key 'pca.realizations': need at least 2 realizations")
    return config


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(text)


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form; parsing it reproduces the configuration."""

    def fmt(value) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return format(value, ".17g")
        if isinstance(value, int):
            return str(value)
        return str(value)

    lines = []
    for key, (attr, kind) in _SCHEMA.items():
        source = getattr(config.opt, attr) if key in _OPT_KEYS else getattr(config, attr)
        if kind == "disks":
            value = "; ".join(" ".join(fmt(c) for c in disk) for disk in source)
        elif kind in ("floats", "pair"):
            value = " ".join(fmt(v) for v in source)
        else:
            value = fmt(source)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
