"""Random conductivity realizations and the truncated PCA control space.

A library of two-phase random fields (1 to 7 circular inclusions each) is
reduced by a singular value decomposition of the centered sample matrix.
The affine maps between physical per-element conductivity and reduced
coordinates, and the transpose map for gradients, live here.

The sample generator uses a self-contained splitmix64 stream so that a
seed pins the realization set byte-for-byte independently of platform
RNG details. Consumption order per realization: inclusion count, then
(cx, cy) pairs until one lands inside the disk, then the radius, for each
inclusion in turn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import DiskMesh

_MASK = (1 << 64) - 1


class SplitMix64:
    """Deterministic 64-bit generator (splitmix64)."""

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return (z ^ (z >> 31)) & _MASK

    def next_float(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_int(self, low: int, high: int) -> int:
        """Uniform integer in {low, ..., high}."""
        return low + int(self.next_float() * (high - low + 1))


@dataclass(frozen=True)
class RealizationSet:
    """Per-element conductivity samples, one row per realization."""

    samples: np.ndarray
    seed: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=float)
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def count(self) -> int:
        return int(self.samples.shape[0])


def generate_realizations(
    mesh: DiskMesh, count: int, seed: int, sigma_low: float, sigma_high: float
) -> RealizationSet:
    """Draw ``count`` two-phase fields with 1..7 random inclusions each.

    Inclusion centers are uniform over the disk (rejection sampling in the
    bounding square), radii uniform in (0, 0.3 * radius]. Elements take
    ``sigma_high`` when their centroid falls in any inclusion and
    ``sigma_low`` otherwise.
    """
    if count < 2:
        raise ValueError("need at least two realizations")
    rng = SplitMix64(seed)
    centroids = mesh.centroids()
    r_max = 0.3 * mesh.radius
    samples = np.empty((count, mesh.n_elements))
    for row in range(count):
        values = np.full(mesh.n_elements, float(sigma_low))
        for _ in range(rng.next_int(1, 7)):
            while True:
                cx = (2.0 * rng.next_float() - 1.0) * mesh.radius
                cy = (2.0 * rng.next_float() - 1.0) * mesh.radius
                if cx * cx + cy * cy <= mesh.radius * mesh.radius:
                    break
            radius = (1.0 - rng.next_float()) * r_max
            d2 = (centroids[:, 0] - cx) ** 2 + (centroids[:, 1] - cy) ** 2
            values[d2 <= radius * radius] = float(sigma_high)
        samples[row] = values
    return RealizationSet(samples=samples, seed=int(seed))


@dataclass(frozen=True)
class PcaBasis:
    """Truncated affine parameterization sigma = phi @ xi + mean.

    ``phi`` stacks the leading left singular vectors scaled by their
    singular values; the pseudo-inverse map divides by the squared
    singular values, so round trips through the retained subspace are
    exact.
    """

    mean: np.ndarray
    phi: np.ndarray
    sing_values: np.ndarray
    spectrum: np.ndarray
    n_xi: int
    variance_fraction: float

    def __post_init__(self):
        for name in ("mean", "phi", "sing_values", "spectrum"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def variance_curve(spectrum: np.ndarray) -> np.ndarray:
    """Cumulative retained-variance percentages r_v(k), k = 1..len."""
    lam = np.asarray(spectrum, dtype=float) ** 2
    total = lam.sum()
    if total == 0.0:
        return np.zeros_like(lam)
    return 100.0 * np.cumsum(lam) / total


def build_basis(realizations: RealizationSet, variance_target: float) -> PcaBasis:
    """Truncated SVD of the centered, scaled sample matrix.

    Keeps the smallest number of components whose eigenvalues accumulate
    at least ``variance_target`` percent of the total variance; 100
    retains the full numerical rank. Identical realizations yield a rank
    zero basis.
    """
    if not 0.0 < variance_target <= 100.0:
        raise ValueError("variance target must lie in (0, 100]")
    x = realizations.samples.T.astype(float)
    mean = x.mean(axis=1)
    y = (x - mean[:, None]) / np.sqrt(realizations.count - 1)
    u, s, _ = np.linalg.svd(y, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(y.shape) * np.finfo(float).eps)) if s.size and s[0] > 0 else 0
    if rank == 0:
        return PcaBasis(
            mean=mean,
            phi=np.zeros((x.shape[0], 0)),
            sing_values=np.zeros(0),
            spectrum=s,
            n_xi=0,
            variance_fraction=0.0,
        )
    curve = variance_curve(s)
    reached = np.nonzero(curve[:rank] >= variance_target - 1e-9)[0]
    n_xi = int(reached[0]) + 1 if reached.size else rank
    phi = u[:, :n_xi] * s[:n_xi]
    return PcaBasis(
        mean=mean,
        phi=phi,
        sing_values=s[:n_xi],
        spectrum=s,
        n_xi=n_xi,
        variance_fraction=float(curve[n_xi - 1]),
    )


def to_physical(xi: np.ndarray, basis: PcaBasis, bounds: tuple[float, float] | None = None) -> np.ndarray:
    """Map reduced coordinates to per-element conductivity values.

    When ``bounds`` is given the result is clamped into the admissible
    box, mirroring the optimizer's projection.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (basis.n_xi,):
        raise ValueError(f"expected {basis.n_xi} reduced coordinates, got {xi.shape}")
    values = basis.mean + basis.phi @ xi
    if bounds is not None:
        values = np.clip(values, bounds[0], bounds[1])
    return values


def to_reduced(sigma_values: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Pseudo-inverse map from conductivity values to reduced coordinates."""
    centered = np.asarray(sigma_values, dtype=float) - basis.mean
    if basis.n_xi == 0:
        return np.zeros(0)
    return (basis.phi.T @ centered) / basis.sing_values**2


def project_gradient(coefficient_gradient: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Transpose map for gradients, phi^T g.

    ``coefficient_gradient`` must be the derivative with respect to the
    raw per-element values, i.e. the gradient density already multiplied
    by element areas; the reduced pairing is then plain Euclidean.
    """
    return basis.phi.T @ np.asarray(coefficient_gradient, dtype=float)


def save_basis(path, basis: PcaBasis, *, count: int | None = None, seed: int | None = None, variance_target: float | None = None) -> None:
    """Persist the basis as plain text; reload reproduces it bit-exactly."""
    n_sigma = basis.mean.size
    header = (
        f"{n_sigma} {basis.n_xi} {-1 if count is None else count} "
        f"{-1 if seed is None else seed} "
        f"{'nan' if variance_target is None else format(variance_target, '.17g')} "
        f"{basis.variance_fraction:.17g}"
    )
    lines = [header]
    lines.append(" ".join(f"{v:.17g}" for v in basis.mean))
    lines.append(" ".join(f"{v:.17g}" for v in basis.sing_values))
    lines.append(" ".join(f"{v:.17g}" for v in basis.spectrum))
    for k in range(basis.n_xi):
        lines.append(" ".join(f"{v:.17g}" for v in basis.phi[:, k]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_basis(path) -> PcaBasis:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        n_sigma, n_xi = int(header[0]), int(header[1])
        variance_fraction = float(header[5])
        mean = np.array([float(t) for t in fh.readline().split()])
        sing = np.array([float(t) for t in fh.readline().split()])
        spectrum = np.array([float(t) for t in fh.readline().split()])
        phi = np.empty((n_sigma, n_xi))
        for k in range(n_xi):
            phi[:, k] = [float(t) for t in fh.readline().split()]
    if mean.size != n_sigma or sing.size != n_xi:
        raise ValueError(f"{path}: inconsistent basis file")
    return PcaBasis(
        mean=mean,
        phi=phi,
        sing_values=sing,
        spectrum=spectrum,
        n_xi=n_xi,
        variance_fraction=variance_fraction,
    )
