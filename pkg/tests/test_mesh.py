import math

import numpy as np
import pytest

from eit_opt import (
    ConductivityField,
    ElectrodeLayout,
    PhantomSpec,
    build_disk_mesh,
    electrode_coverage,
    rasterize_phantom,
    tag_electrodes,
    write_vtk,
)
from eit_opt.mesh import wrap_angle

from conftest import BOUNDS, PHANTOM

# frozen generator outputs (one-time freeze run, see README)
GOLDEN_ELEMENTS = {12: 40, 48: 580, 96: 2308, 176: 7748}


def unique_edges(mesh):
    edges = set()
    for a, b, c in mesh.triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            edges.add((min(u, v), max(u, v)))
    return edges


class TestBuildDiskMesh:
    def test_minimum_mesh(self):
        mesh = build_disk_mesh(0.1, 12)
        assert mesh.n_boundary == 12
        assert np.all(mesh.triangle_areas() > 0.0)

    @pytest.mark.parametrize("n_v", [12, 48, 96, 176])
    def test_golden_element_counts(self, n_v):
        assert build_disk_mesh(0.1, n_v).n_elements == GOLDEN_ELEMENTS[n_v]

    def test_element_count_window_96(self):
        assert 1500 <= build_disk_mesh(0.1, 96).n_elements <= 2600

    def test_quadratic_growth(self):
        t48 = build_disk_mesh(0.1, 48).n_elements
        t96 = build_disk_mesh(0.1, 96).n_elements
        assert 3.0 <= t96 / t48 <= 5.0

    @pytest.mark.parametrize("n_v", [12, 48, 96])
    def test_euler_characteristic(self, n_v):
        mesh = build_disk_mesh(0.1, n_v)
        v = mesh.n_vertices
        f = mesh.n_elements
        e = len(unique_edges(mesh))
        assert v - e + f == 1

    def test_boundary_loop_closes_and_covers(self):
        mesh = build_disk_mesh(0.1, 48)
        assert mesh.edge_vertices[-1, 1] == mesh.edge_vertices[0, 0]
        assert np.array_equal(mesh.edge_vertices[:-1, 1], mesh.edge_vertices[1:, 0])
        spans = mesh.edge_angles
        assert spans[0, 0] == 0.0
        assert math.isclose(spans[-1, 1], 2.0 * math.pi, rel_tol=0, abs_tol=1e-14)
        assert np.allclose(spans[1:, 0], spans[:-1, 1])

    def test_boundary_vertices_on_circle(self):
        mesh = build_disk_mesh(0.1, 96)
        boundary = np.unique(mesh.edge_vertices)
        radii = np.hypot(*mesh.vertices[boundary].T)
        assert np.all(np.abs(radii - 0.1) <= 1e-12 * 0.1)

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            build_disk_mesh(0.1, 8)
        with pytest.raises(ValueError):
            build_disk_mesh(0.1, 50)

    def test_deterministic(self):
        a = build_disk_mesh(0.1, 96)
        b = build_disk_mesh(0.1, 96)
        assert np.array_equal(a.vertices, b.vertices)
        assert np.array_equal(a.triangles, b.triangles)
        assert a.vertices.tobytes() == b.vertices.tobytes()


class TestElectrodeLayout:
    def test_equispaced_centers(self):
        layout = ElectrodeLayout.equispaced(16)
        assert np.allclose(layout.centers, 2.0 * math.pi * np.arange(16) / 16)
        assert layout.count == 16

    def test_coverage_benchmark_layout(self):
        assert electrode_coverage(ElectrodeLayout.equispaced(16, 0.12)) == pytest.approx(0.6112, abs=1e-4)

    def test_coverage_full_circle(self):
        assert electrode_coverage(ElectrodeLayout.equispaced(1, math.pi)) == pytest.approx(1.0)

    def test_coverage_half(self):
        assert electrode_coverage(ElectrodeLayout.equispaced(4, math.pi / 8)) == pytest.approx(0.5)

    def test_overlapping_arcs_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            ElectrodeLayout.equispaced(16, half_width=0.3)

    def test_nonpositive_impedance_rejected(self):
        with pytest.raises(ValueError):
            ElectrodeLayout(np.array([0.0, math.pi]), 0.1, np.array([0.1, 0.0]))


class TestTagElectrodes:
    def test_benchmark_layout_tags_enough_edges(self, mesh96, layout):
        counts = np.bincount(mesh96.edge_electrode[mesh96.edge_electrode >= 0], minlength=16)
        assert np.all(counts >= 3)

    def test_vanishing_width_tags_nothing(self):
        mesh = build_disk_mesh(0.1, 96)
        tagged = tag_electrodes(mesh, ElectrodeLayout.equispaced(16, half_width=1e-9))
        assert np.all(tagged.edge_electrode == -1)

    def test_single_covering_electrode_tags_all_but_one(self):
        mesh = build_disk_mesh(0.1, 96)
        h = 2.0 * math.pi / 96
        layout = ElectrodeLayout(np.array([h / 2]), math.pi - h / 2, np.array([0.1]))
        tagged = tag_electrodes(mesh, layout)
        assert np.sum(tagged.edge_electrode == 0) == 95
        assert np.sum(tagged.edge_electrode == -1) == 1

    def test_tagged_arc_length_matches_coverage(self, mesh96, layout):
        edge_arc = 2.0 * math.pi / 96 * 0.1
        target = 2.0 * layout.half_width * 0.1
        for l in range(16):
            tagged = np.sum(mesh96.edge_electrode == l) * edge_arc
            assert abs(tagged - target) <= edge_arc + 1e-15

    def test_at_most_one_tag_per_edge(self, mesh96):
        assert mesh96.edge_electrode.ndim == 1  # single tag slot by construction


class TestRasterizePhantom:
    def test_benchmark_phantom_values(self, mesh96):
        field = rasterize_phantom(mesh96, PHANTOM, BOUNDS)
        centroids = mesh96.centroids()
        inside = np.argmin(np.hypot(centroids[:, 0] - 0.0, centroids[:, 1] - 0.05))
        outside = np.argmin(np.hypot(centroids[:, 0] - 0.05, centroids[:, 1] + 0.05))
        assert field.values[inside] == 0.4
        assert field.values[outside] == 0.2

    def test_empty_inclusions_uniform(self, mesh96):
        spec = PhantomSpec(0.2, 0.4, ())
        field = rasterize_phantom(mesh96, spec)
        assert np.all(field.values == 0.2)

    def test_covering_inclusion_uniform(self, mesh96):
        spec = PhantomSpec(0.2, 0.4, ((0.0, 0.0, 1.0),))
        field = rasterize_phantom(mesh96, spec)
        assert np.all(field.values == 0.4)

    def test_inclusion_outside_domain_rejected(self, mesh96):
        spec = PhantomSpec(0.2, 0.4, ((0.5, 0.5, 0.01),))
        with pytest.raises(ValueError, match="misses the domain"):
            rasterize_phantom(mesh96, spec)


class TestConductivityField:
    def test_bounds_enforced(self):
        with pytest.raises(ValueError):
            ConductivityField(np.array([0.05, 0.3]), (0.1, 0.6))
        with pytest.raises(ValueError):
            ConductivityField(np.array([0.3]), (-0.1, 0.6))

    def test_values_frozen(self):
        field = ConductivityField(np.array([0.3, 0.4]), (0.1, 0.6))
        with pytest.raises(ValueError):
            field.values[0] = 0.2


def test_wrap_angle_range():
    angles = np.linspace(-10.0, 10.0, 101)
    wrapped = wrap_angle(angles)
    assert np.all(wrapped > -math.pi - 1e-12)
    assert np.all(wrapped <= math.pi + 1e-12)
    assert np.allclose(np.cos(wrapped), np.cos(angles))


def test_vtk_roundtrip_structure(tmp_path, mesh96, sigma_true):
    path = tmp_path / "field.vtk"
    write_vtk(path, mesh96, sigma_true.values)
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 2.0"
    assert "DATASET UNSTRUCTURED_GRID" in lines
    assert f"POINTS {mesh96.n_vertices} double" in lines
    assert f"CELLS {mesh96.n_elements} {4 * mesh96.n_elements}" in lines
    cell_types = lines.index(f"CELL_TYPES {mesh96.n_elements}")
    assert lines[cell_types + 1] == "5"
    assert "SCALARS sigma double 1" in lines
    values = [float(v) for v in lines[-mesh96.n_elements:]]
    assert np.allclose(values, sigma_true.values)
