import numpy as np
import pytest

from eit_opt import (
    ElectrodeLayout,
    MeasurementSet,
    OptConfig,
    PhantomSpec,
    SmoothingConfig,
    build_disk_mesh,
    rasterize_phantom,
    tag_electrodes,
)
from eit_opt.optimizer import run_descent

BOUNDS = (0.1, 0.6)
CURRENTS = np.array([-3, 2, 3, -7, 6, -1, -4, 2, 4, 3, -5, 4, 3, -5, 2, -4], dtype=float) / 100.0
U_INI = np.array([-1.0, 1.0] * 8)
PHANTOM = PhantomSpec(
    background=0.2,
    inclusion_value=0.4,
    inclusions=(
        (0.0, 0.05, 0.03),
        (-0.075, -0.01, 0.0063),
        (-0.015, -0.02, 0.0122),
        (0.025, -0.055, 0.0235),
    ),
)


@pytest.fixture(scope="session")
def layout():
    return ElectrodeLayout.equispaced(16)


@pytest.fixture(scope="session")
def mesh96(layout):
    return tag_electrodes(build_disk_mesh(0.1, 96), layout)


@pytest.fixture(scope="session")
def mesh48(layout):
    return tag_electrodes(build_disk_mesh(0.1, 48), layout)


@pytest.fixture(scope="session")
def sharp():
    return SmoothingConfig()


@pytest.fixture(scope="session")
def sigma_true(mesh96):
    return rasterize_phantom(mesh96, PHANTOM, BOUNDS)


@pytest.fixture(scope="session")
def sigma_ini(mesh96):
    return np.full(mesh96.n_elements, 0.3)


@pytest.fixture(scope="session")
def u_star(mesh96, layout, sigma_true):
    """Measured voltages: the converged voltage fit at the true conductivity."""
    data = MeasurementSet(u_star=None, currents=CURRENTS[None, :])
    cfg = OptConfig(lbfgs_memory=16, tol=1e-6, max_iters=250)
    record = run_descent("voltage", sigma_true, U_INI, data, cfg, mesh96, layout)
    assert record.final_cost < 1e-20
    return record.final_voltages


@pytest.fixture(scope="session")
def single_data(u_star):
    return MeasurementSet(u_star=u_star, currents=CURRENTS[None, :])


@pytest.fixture(scope="session")
def rotation_data(mesh96, layout, sigma_true, u_star, sharp):
    from eit_opt import synthesize_rotation_data

    return synthesize_rotation_data(sigma_true, u_star, mesh96, layout, sharp)
