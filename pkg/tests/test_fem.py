import math

import numpy as np
import pytest
import scipy.sparse as sp

from eit_opt import (
    ElectrodeLayout,
    SmoothingConfig,
    SolverError,
    assemble,
    build_disk_mesh,
    electrode_integral,
    electrode_weight,
    sobolev_smooth,
    solve_adjoint,
    solve_spd,
    solve_state,
    solve_unit_voltage,
    tag_electrodes,
)
from eit_opt.fem import SparseSpdSystem, boundary_operator, element_geometry
from eit_opt.mesh import TWO_PI

from conftest import U_INI


class TestElectrodeWeight:
    def test_arc_center(self, layout):
        for eps in (0.0, 0.05, 0.3162):
            assert electrode_weight(layout.centers[3], 3, layout, eps) >= 0.5
        assert electrode_weight(layout.centers[3], 3, layout, 0.0) == 1.0

    def test_endpoint_half(self, layout):
        theta = layout.centers[0] + layout.half_width
        assert electrode_weight(theta, 0, layout, 0.05) == pytest.approx(0.5, abs=1e-15)
        assert electrode_weight(theta, 0, layout, 0.0) == 0.5

    def test_sharp_limit_recovers_indicator(self, layout):
        thetas = np.linspace(0.0, TWO_PI, 721)
        sharp = electrode_weight(thetas, 5, layout, 0.0)
        smooth = electrode_weight(thetas, 5, layout, 1e-9)
        interior = np.abs(np.abs(thetas - layout.centers[5]) - layout.half_width) > 1e-3
        assert np.allclose(sharp[interior], smooth[interior], atol=1e-12)

    def test_bounded(self, layout):
        thetas = np.linspace(-7.0, 7.0, 500)
        for eps in (0.0, 0.01, 1.0):
            w = electrode_weight(thetas, 7, layout, eps)
            assert np.all((w >= 0.0) & (w <= 1.0))


def sharp_boundary_oracle(mesh, layout):
    """Closed-form Robin boundary terms over exactly clipped electrode arcs.

    Independent of the production quadrature: the P1 products are
    integrated analytically in the edge parameter over the intersection of
    each edge span with each arc.
    """
    n = mesh.n_vertices
    mass = np.zeros((n, n))
    load = np.zeros((layout.count, n))
    arc = np.zeros(layout.count)
    r = mesh.radius
    for l in range(layout.count):
        c = layout.centers[l]
        z = layout.impedances[l]
        for e in range(mesh.edge_angles.shape[0]):
            a, b = mesh.edge_angles[e]
            h = b - a
            for shift in (-TWO_PI, 0.0, TWO_PI):
                lo = max(a, c - layout.half_width + shift)
                hi = min(b, c + layout.half_width + shift)
                if hi <= lo:
                    continue
                t1, t2 = (lo - a) / h, (hi - a) / h
                v1, v2 = mesh.edge_vertices[e]
                i00 = h * (((1 - t1) ** 3 - (1 - t2) ** 3) / 3.0)
                i11 = h * ((t2**3 - t1**3) / 3.0)
                i01 = h * ((t2**2 - t1**2) / 2.0 - (t2**3 - t1**3) / 3.0)
                mass[v1, v1] += r * i00 / z
                mass[v2, v2] += r * i11 / z
                mass[v1, v2] += r * i01 / z
                mass[v2, v1] += r * i01 / z
                load[l, v1] += r * h * ((t2 - t1) - (t2**2 - t1**2) / 2.0)
                load[l, v2] += r * h * (t2**2 - t1**2) / 2.0
                arc[l] += r * (hi - lo)
    return mass, load, arc


class TestBoundaryQuadrature:
    def test_arc_length_exact(self, mesh96, layout, sharp):
        target = 2.0 * layout.half_width * mesh96.radius
        for l in (0, 5, 11):
            value = electrode_integral(1.0, l, layout, mesh96, sharp)
            assert value == pytest.approx(target, rel=1e-12)

    def test_zero_field(self, mesh96, layout, sharp):
        zero = np.zeros(mesh96.n_vertices)
        assert electrode_integral(zero, 4, layout, mesh96, sharp) == 0.0

    def test_sharp_vs_tiny_smoothing(self, mesh96, layout):
        sharp_val = electrode_integral(1.0, 2, layout, mesh96, SmoothingConfig(bc_eps=0.0))
        smooth_val = electrode_integral(1.0, 2, layout, mesh96, SmoothingConfig(bc_eps=1e-6))
        assert abs(sharp_val - smooth_val) / sharp_val <= 1e-3

    def test_sharp_assembly_matches_clipped_oracle(self, mesh96, layout, sharp):
        bop = boundary_operator(mesh96, layout, sharp)
        mass, load, arc = sharp_boundary_oracle(mesh96, layout)
        assert np.abs(bop.robin_mass.toarray() - mass).max() <= 1e-12
        assert np.abs(bop.load - load).max() <= 1e-12
        assert np.abs(bop.arc_measures - arc).max() <= 1e-12


class TestAssemble:
    def test_zero_voltages_zero_rhs(self, mesh96, layout, sigma_true, sharp):
        system = assemble(mesh96, sigma_true, layout, np.zeros(16), sharp)
        assert np.all(system.rhs == 0.0)

    def test_doubling_impedance_halves_boundary_terms(self, mesh96, sigma_true, sharp):
        lay1 = ElectrodeLayout.equispaced(16, 0.12, 0.1)
        lay2 = ElectrodeLayout.equispaced(16, 0.12, 0.2)
        s1 = assemble(mesh96, sigma_true, lay1, U_INI, sharp)
        s2 = assemble(mesh96, sigma_true, lay2, U_INI, sharp)
        bm1 = boundary_operator(mesh96, lay1, sharp).robin_mass
        bm2 = boundary_operator(mesh96, lay2, sharp).robin_mass
        assert np.allclose(bm1.toarray(), 2.0 * bm2.toarray(), rtol=1e-14, atol=1e-18)
        assert np.allclose(s1.rhs, 2.0 * s2.rhs, rtol=1e-14, atol=1e-18)

    def test_matrix_symmetric(self, mesh96, layout, sigma_true, sharp):
        system = assemble(mesh96, sigma_true, layout, U_INI, sharp)
        diff = (system.matrix - system.matrix.T).toarray()
        assert np.abs(diff).max() == 0.0

    def test_rejects_nonpositive_sigma(self, mesh96, layout, sharp):
        bad = np.full(mesh96.n_elements, 0.3)
        bad[7] = 0.0
        with pytest.raises(ValueError, match="positive"):
            assemble(mesh96, bad, layout, U_INI, sharp)


class TestSolveSpd:
    def test_zero_rhs(self):
        matrix = sp.identity(5, format="csr")
        x = solve_spd(SparseSpdSystem(matrix=matrix, rhs=np.zeros(5)))
        assert np.all(x == 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = rng.integers(5, 21)
        b_mat = rng.normal(size=(n, n))
        dense = b_mat.T @ b_mat + n * np.eye(n)
        rhs = rng.normal(size=n)
        x = solve_spd(SparseSpdSystem(matrix=sp.csr_matrix(dense), rhs=rhs))
        assert np.abs(x - np.linalg.solve(dense, rhs)).max() <= 1e-10

    def test_residual_contract(self, mesh96, layout, sigma_true, sharp):
        system = assemble(mesh96, sigma_true, layout, U_INI, sharp)
        x = solve_spd(system)
        rel = np.linalg.norm(system.matrix @ x - system.rhs) / np.linalg.norm(system.rhs)
        assert rel <= 1e-12

    def test_nonconvergence_reported(self):
        rng = np.random.default_rng(5)
        n = 40
        q = np.linalg.qr(rng.normal(size=(n, n)))[0]
        dense = q @ np.diag(np.logspace(0, 15, n)) @ q.T
        with pytest.raises(SolverError) as info:
            solve_spd(SparseSpdSystem(matrix=sp.csr_matrix(dense), rhs=rng.normal(size=n)), rtol=1e-16)
        assert math.isfinite(info.value.residual)


class TestSolveState:
    def test_zero_voltages(self, mesh96, layout, sigma_true, sharp):
        u = solve_state(mesh96, sigma_true, layout, np.zeros(16), sharp)
        assert np.all(u == 0.0)

    def test_two_electrode_antisymmetry(self):
        layout = ElectrodeLayout.equispaced(2, 0.12, 0.1)
        mesh = tag_electrodes(build_disk_mesh(0.1, 96), layout)
        sigma = np.full(mesh.n_elements, 0.3)
        u = solve_state(mesh, sigma, layout, np.array([1.0, -1.0]), SmoothingConfig())
        assert abs(u[0]) <= 1e-8  # center vertex
        order = np.lexsort(np.round(mesh.vertices.T, 12))
        mirrored = np.lexsort(np.round(-mesh.vertices.T, 12))
        assert np.abs(u[order] + u[mirrored]).max() <= 1e-8

    def test_linearity(self, mesh96, layout, sigma_true, sharp):
        rng = np.random.default_rng(7)
        u1_data = rng.normal(size=16)
        u2_data = rng.normal(size=16)
        a, b = 0.7, -1.3
        lhs = solve_state(mesh96, sigma_true, layout, a * u1_data + b * u2_data, sharp)
        rhs = a * solve_state(mesh96, sigma_true, layout, u1_data, sharp) + b * solve_state(
            mesh96, sigma_true, layout, u2_data, sharp
        )
        assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(lhs).max())

    def test_weak_residual_random_test_vectors(self, mesh96, layout, sigma_true, sharp):
        system = assemble(mesh96, sigma_true, layout, U_INI, sharp)
        u = solve_spd(system)
        residual = system.matrix @ u - system.rhs
        rng = np.random.default_rng(11)
        for _ in range(20):
            eta = rng.normal(size=u.size)
            defect = abs(float(eta @ residual))
            assert defect <= 1e-9 * np.linalg.norm(u) * np.linalg.norm(eta)

    def test_conservation_of_charge(self, mesh96, layout, sigma_true, sharp):
        from eit_opt import electrode_currents

        u = solve_state(mesh96, sigma_true, layout, U_INI, sharp)
        currents = electrode_currents(u, U_INI, layout, mesh96, sharp)
        assert abs(currents.sum()) <= 1e-8 * np.abs(currents).sum()

    def test_joint_scaling_invariance(self, mesh96, sigma_true, sharp):
        c = 3.7
        lay1 = ElectrodeLayout.equispaced(16, 0.12, 0.1)
        lay2 = ElectrodeLayout.equispaced(16, 0.12, 0.1 / c)
        u1 = solve_state(mesh96, sigma_true.values, lay1, U_INI, sharp)
        u2 = solve_state(mesh96, c * sigma_true.values, lay2, U_INI, sharp)
        assert np.abs(u1 - u2).max() <= 1e-10 * max(1.0, np.abs(u1).max())


class TestSolveAdjoint:
    def test_zero_residual_gives_zero_adjoint(self, mesh96, layout, sigma_true, sharp):
        from eit_opt import electrode_currents

        u = solve_state(mesh96, sigma_true, layout, U_INI, sharp)
        exact = electrode_currents(u, U_INI, layout, mesh96, sharp)
        psi = solve_adjoint(mesh96, sigma_true, layout, u, U_INI, exact, sharp)
        assert np.abs(psi).max() <= 1e-10 * max(1.0, np.abs(u).max())

    def test_weak_residual(self, mesh96, layout, sigma_ini, sharp):
        from conftest import CURRENTS
        from eit_opt.fem import FemContext, adjoint_data

        u = solve_state(mesh96, sigma_ini, layout, U_INI, sharp)
        psi = solve_adjoint(mesh96, sigma_ini, layout, u, U_INI, CURRENTS, sharp)
        ctx = FemContext(mesh96, layout, sharp)
        matrix = ctx.system_matrix(sigma_ini)
        g = adjoint_data(ctx.boundary, layout, u, U_INI, CURRENTS)
        residual = matrix @ psi - ctx.boundary.rhs(g, layout.impedances)
        assert np.linalg.norm(residual) <= 1e-10 * max(1.0, np.linalg.norm(psi))

    def test_affine_in_currents(self, mesh96, layout, sigma_ini, sharp):
        from conftest import CURRENTS

        u = solve_state(mesh96, sigma_ini, layout, U_INI, sharp)
        psi0 = solve_adjoint(mesh96, sigma_ini, layout, u, U_INI, 0.0 * CURRENTS, sharp)
        psi1 = solve_adjoint(mesh96, sigma_ini, layout, u, U_INI, CURRENTS, sharp)
        psi2 = solve_adjoint(mesh96, sigma_ini, layout, u, U_INI, 2.0 * CURRENTS, sharp)
        assert np.abs(psi0 - 2.0 * psi1 + psi2).max() <= 1e-9 * max(1.0, np.abs(psi1).max())


class TestUnitVoltage:
    def test_superposition(self, mesh96, layout, sigma_true, sharp):
        total = sum(solve_unit_voltage(mesh96, sigma_true, layout, k, sharp) for k in range(16))
        direct = solve_state(mesh96, sigma_true, layout, np.ones(16), sharp)
        assert np.abs(total - direct).max() <= 1e-9 * max(1.0, np.abs(direct).max())

    def test_reciprocity(self, mesh96, layout, sigma_true, sharp):
        from eit_opt import electrode_currents

        t_matrix = np.empty((16, 16))
        for k in range(16):
            w = solve_unit_voltage(mesh96, sigma_true, layout, k, sharp)
            t_matrix[:, k] = electrode_currents(w, np.eye(16)[k], layout, mesh96, sharp)
        assert np.abs(t_matrix - t_matrix.T).max() <= 1e-8

    def test_discrete_maximum_principle(self, mesh96, layout, sharp):
        sigma = np.full(mesh96.n_elements, 0.3)
        w = solve_unit_voltage(mesh96, sigma, layout, 5, sharp)
        assert w.min() >= -1e-12
        assert w.max() <= 1.0 + 1e-12


class TestSobolevSmooth:
    def test_zero_scale_is_identity(self, mesh96):
        rng = np.random.default_rng(3)
        g = rng.normal(size=mesh96.n_elements)
        out = sobolev_smooth(mesh96, g, 0.0)
        assert np.array_equal(out, g)

    @pytest.mark.parametrize("ell", [1e-8, 1e-6, 1e-4])
    def test_constant_field_fixed_point(self, mesh96, ell):
        g = np.full(mesh96.n_elements, 2.5)
        out = sobolev_smooth(mesh96, g, ell)
        assert np.abs(out - 2.5).max() <= 1e-9

    @pytest.mark.parametrize("ell", [1e-7, 1e-5])
    def test_mean_preservation(self, mesh96, ell):
        rng = np.random.default_rng(4)
        g = rng.normal(size=mesh96.n_elements) + 1.0
        out = sobolev_smooth(mesh96, g, ell)
        areas = mesh96.triangle_areas()
        mean_in = float(areas @ g) / areas.sum()
        mean_out = float(areas @ out) / areas.sum()
        assert abs(mean_out - mean_in) <= 1e-8 * abs(mean_in)

    def test_smooths_oscillations(self, mesh96):
        centroids = mesh96.centroids()
        g = np.sign(np.sin(200.0 * centroids[:, 0]))
        out = sobolev_smooth(mesh96, g, 1e-4)
        geo = element_geometry(mesh96)
        assert np.std(out) < np.std(g)
