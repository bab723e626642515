"""Disk domain: structured triangulation, electrode geometry, phantoms.

The mesh generator is deterministic. Boundary vertices are equispaced on
the circle; the interior is built from concentric rings (``n_v/4`` of
them) that are zipped together ring by ring, with a triangle fan around
the center. Boundary edges carry their angular span so that boundary
quadrature can be performed in the angle parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .fields import ConductivityField

TWO_PI = 2.0 * math.pi


def wrap_angle(delta) -> np.ndarray:
    """Wrap angular differences into (-pi, pi]."""
    d = np.asarray(delta, dtype=float)
    return d - TWO_PI * np.floor(d / TWO_PI + 0.5)


@dataclass(frozen=True)
class ElectrodeLayout:
    """Electrode arcs on the disk boundary.

    Parameters
    ----------
    centers : ndarray
        Angular coordinates of the arc centers, radians.
    half_width : float
        Half of each arc's angular extent, radians.
    impedances : ndarray
        Contact impedance per electrode, Ohm, all positive.
    """

    centers: np.ndarray
    half_width: float
    impedances: np.ndarray

    def __post_init__(self):
        centers = np.ascontiguousarray(self.centers, dtype=float) % TWO_PI
        impedances = np.ascontiguousarray(self.impedances, dtype=float)
        centers.flags.writeable = False
        impedances.flags.writeable = False
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "impedances", impedances)
        object.__setattr__(self, "half_width", float(self.half_width))
        if centers.ndim != 1 or centers.size < 1:
            raise ValueError("at least one electrode center is required")
        if impedances.shape != centers.shape:
            raise ValueError("impedances and centers must have equal length")
        if np.any(impedances <= 0.0):
            raise ValueError("contact impedances must be positive")
        if not 0.0 < self.half_width <= math.pi:
            raise ValueError("electrode half-width must lie in (0, pi]")
        if centers.size > 1:
            order = np.argsort(centers)
            sorted_c = centers[order]
            gaps = np.diff(np.append(sorted_c, sorted_c[0] + TWO_PI))
            if np.any(gaps < 2.0 * self.half_width - 1e-14):
                raise ValueError("electrode arcs overlap")

    @property
    def count(self) -> int:
        return int(self.centers.size)

    @classmethod
    def equispaced(cls, count: int, half_width: float = 0.12, impedance: float = 0.1) -> "ElectrodeLayout":
        """Electrodes centered at 2*pi*(l-1)/count with a shared impedance."""
        if count < 1:
            raise ValueError("electrode count must be at least 1")
        centers = TWO_PI * np.arange(count) / count
        return cls(centers, half_width, np.full(count, float(impedance)))


def electrode_coverage(layout: ElectrodeLayout) -> float:
    """Fraction of the boundary covered by electrode arcs."""
    return layout.count * 2.0 * layout.half_width / TWO_PI


@dataclass(frozen=True)
class DiskMesh:
    """Triangulated disk with electrode-tagged boundary edges.

    ``edge_angles[i] = (a, b)`` is the angular span of boundary edge i with
    ``b - a = 2*pi/n_boundary``; the last edge ends at exactly ``2*pi``.
    ``edge_electrode[i]`` is the tag (-1 for none): an edge is tagged l
    when its angular midpoint lies inside electrode l's arc.
    """

    radius: float
    vertices: np.ndarray
    triangles: np.ndarray
    edge_vertices: np.ndarray
    edge_angles: np.ndarray
    edge_electrode: np.ndarray
    n_boundary: int

    def __post_init__(self):
        for name in ("vertices", "triangles", "edge_vertices", "edge_angles", "edge_electrode"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.triangles.shape[0])

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)


def _ring_sizes(n_boundary: int) -> list[int]:
    n_rings = n_boundary // 4
    return [max(6, round(n_boundary * k / n_rings)) for k in range(1, n_rings + 1)]


def _zip_rings(inner: np.ndarray, outer: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate the annulus between two vertex rings sorted by angle."""
    a, b = len(inner), len(outer)
    tris = []
    i = j = 0
    while i < a or j < b:
        inner_next = (i + 1) / a
        outer_next = (j + 1) / b
        if j >= b or (i < a and inner_next <= outer_next):
            tris.append((inner[(i + 1) % a], inner[i % a], outer[j % b]))
            i += 1
        else:
            tris.append((outer[j % b], outer[(j + 1) % b], inner[i % a]))
            j += 1
    return tris


def build_disk_mesh(radius: float, n_boundary: int) -> DiskMesh:
    """Generate the concentric-ring triangulation of the disk.

    Parameters
    ----------
    radius : float
        Disk radius, meters.
    n_boundary : int
        Number of equispaced boundary vertices; at least 12 and divisible
        by 4. Ring k of n_boundary/4 sits at radius*k/(n_boundary/4) and
        holds max(6, 4k) vertices, so the element count grows as
        Theta(n_boundary^2).

    Returns
    -------
    DiskMesh
        Counterclockwise triangles, untagged boundary edges.
    """
    if radius <= 0.0:
        raise ValueError("disk radius must be positive")
    if n_boundary < 12:
        raise ValueError(f"need at least 12 boundary vertices, got {n_boundary}")
    if n_boundary % 4 != 0:
        raise ValueError(f"boundary vertex count must be divisible by 4, got {n_boundary}")

    sizes = _ring_sizes(n_boundary)
    n_rings = len(sizes)
    coords = [np.zeros((1, 2))]
    rings: list[np.ndarray] = []
    offset = 1
    for k, size in enumerate(sizes, start=1):
        theta = TWO_PI * np.arange(size) / size
        r = radius * k / n_rings
        coords.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        rings.append(np.arange(offset, offset + size))
        offset += size
    vertices = np.vstack(coords)

    triangles: list[tuple[int, int, int]] = []
    first = rings[0]
    for i in range(len(first)):
        triangles.append((0, first[i], first[(i + 1) % len(first)]))
    for inner, outer in zip(rings[:-1], rings[1:]):
        triangles.extend(_zip_rings(inner, outer))
    tri = np.asarray(triangles, dtype=np.int64)

    boundary = rings[-1]
    n_b = len(boundary)
    edge_vertices = np.column_stack([boundary, np.roll(boundary, -1)]).astype(np.int64)
    starts = TWO_PI * np.arange(n_b) / n_b
    edge_angles = np.column_stack([starts, starts + TWO_PI / n_b])
    edge_electrode = np.full(n_b, -1, dtype=np.int64)

    mesh = DiskMesh(
        radius=float(radius),
        vertices=vertices,
        triangles=tri,
        edge_vertices=edge_vertices,
        edge_angles=edge_angles,
        edge_electrode=edge_electrode,
        n_boundary=n_b,
    )
    areas = mesh.triangle_areas()
    if np.any(areas <= 0.0):
        raise AssertionError("mesh generator produced a non-positive triangle")
    return mesh


def tag_electrodes(mesh: DiskMesh, layout: ElectrodeLayout) -> DiskMesh:
    """Tag boundary edges by the electrode arc containing their midpoint."""
    mids = mesh.edge_angles.mean(axis=1)
    tags = np.full(mesh.edge_angles.shape[0], -1, dtype=np.int64)
    for l in range(layout.count):
        dist = np.abs(wrap_angle(mids - layout.centers[l]))
        inside = dist < layout.half_width
        tags[inside] = l
    return replace(mesh, edge_electrode=tags)


@dataclass(frozen=True)
class PhantomSpec:
    """Analytic two-phase conductivity: circular inclusions on a background."""

    background: float
    inclusion_value: float
    inclusions: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "inclusions",
            tuple((float(x), float(y), float(r)) for x, y, r in self.inclusions),
        )
        if not self.background > 0.0:
            raise ValueError("background conductivity must be positive")
        if self.inclusion_value < self.background:
            raise ValueError("inclusion conductivity must be at least the background")
        for x, y, r in self.inclusions:
            if r <= 0.0:
                raise ValueError("inclusion radius must be positive")


def rasterize_phantom(
    mesh: DiskMesh, spec: PhantomSpec, bounds: tuple[float, float] | None = None
) -> ConductivityField:
    """Project the analytic phantom onto the P0 element space.

    An element takes the inclusion value when its centroid falls inside
    any inclusion disk, the background value otherwise.
    """
    for x, y, r in spec.inclusions:
        if math.hypot(x, y) - r > mesh.radius:
            raise ValueError(f"inclusion at ({x}, {y}) with radius {r} misses the domain")
    centroids = mesh.centroids()
    values = np.full(mesh.n_elements, spec.background)
    for x, y, r in spec.inclusions:
        d2 = (centroids[:, 0] - x) ** 2 + (centroids[:, 1] - y) ** 2
        values[d2 <= r * r] = spec.inclusion_value
    if bounds is None:
        bounds = (min(spec.background, float(values.min())), max(spec.inclusion_value, float(values.max())))
    return ConductivityField(values, bounds)


def write_vtk(path, mesh: DiskMesh, cell_values: np.ndarray, name: str = "sigma") -> None:
    """Write the mesh and one per-element scalar as legacy ASCII VTK."""
    values = np.asarray(cell_values, dtype=float)
    if values.shape != (mesh.n_elements,):
        raise ValueError("cell data length must match the element count")
    lines = [
        "# vtk DataFile Version 2.0",
        "eit-opt field",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g} 0")
    lines.append(f"CELLS {mesh.n_elements} {4 * mesh.n_elements}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines.extend(["5"] * mesh.n_elements)
    lines.append(f"CELL_DATA {mesh.n_elements}")
    lines.append(f"SCALARS {name} double 1")
    lines.append("LOOKUP_TABLE default")
    for v in values:
        lines.append(f"{v:.17g}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
