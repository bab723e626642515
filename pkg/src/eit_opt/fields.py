"""Shared value types.

Electrode voltage and current vectors are plain length-m float arrays.
Both carry a zero-sum constraint: voltages fix the additive gauge of the
potential, currents conserve charge. ``require_zero_sum`` enforces it at
interface boundaries; hot paths keep raw arrays. Nodal potential fields
are float arrays indexed by mesh vertex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ZERO_SUM_TOL = 1e-10


def zero_sum_defect(vec: np.ndarray) -> float:
    """Absolute sum of the entries, the quantity the constraint bounds."""
    return abs(float(np.sum(np.asarray(vec, dtype=float))))


def require_zero_sum(vec, what: str = "vector", tol: float = ZERO_SUM_TOL) -> np.ndarray:
    """Validate the zero-sum constraint and return the vector as float array.

    The bound is ``tol * max(1, |vec|)`` with the Euclidean norm.
    """
    v = np.asarray(vec, dtype=float)
    bound = tol * max(1.0, float(np.linalg.norm(v)))
    defect = zero_sum_defect(v)
    if defect > bound:
        raise ValueError(f"{what} must sum to zero: sum = {v.sum():.6e} exceeds {bound:.3e}")
    return v


@dataclass(frozen=True)
class ConductivityField:
    """Piecewise-constant conductivity, one value per mesh element.

    Parameters
    ----------
    values : ndarray
        Per-element conductivity in (Ohm*m)^-1.
    bounds : (float, float)
        Admissible box (lo, hi); every value must lie inside and lo > 0.
    """

    values: np.ndarray
    bounds: tuple[float, float]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        lo, hi = float(self.bounds[0]), float(self.bounds[1])
        object.__setattr__(self, "bounds", (lo, hi))
        if not lo > 0.0:
            raise ValueError(f"lower conductivity bound must be positive, got {lo}")
        if not lo <= hi:
            raise ValueError(f"conductivity bounds out of order: ({lo}, {hi})")
        if values.ndim != 1:
            raise ValueError("conductivity values must be a 1-D per-element array")
        if not np.all(np.isfinite(values)):
            raise ValueError("conductivity values must be finite")
        vmin, vmax = float(values.min()), float(values.max())
        if vmin < lo or vmax > hi:
            raise ValueError(
                f"conductivity values [{vmin:.6g}, {vmax:.6g}] exceed bounds ({lo:.6g}, {hi:.6g})"
            )

    @classmethod
    def uniform(cls, value: float, n_elements: int, bounds: tuple[float, float]) -> "ConductivityField":
        return cls(np.full(n_elements, float(value)), bounds)

    def with_values(self, values: np.ndarray) -> "ConductivityField":
        return ConductivityField(values, self.bounds)
