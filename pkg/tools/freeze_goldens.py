#!/usr/bin/env python3
"""Regenerate the golden values committed in the test suite.

Run from the repository root:

    python3 tools/freeze_goldens.py

Prints every frozen quantity with the test that consumes it. Goldens are
refreshed only when the discretization or the sample generator changes
intentionally; the printed values must then be copied into the tests.
"""

import numpy as np

from eit_opt import (
    ElectrodeLayout,
    MeasurementSet,
    OptConfig,
    SmoothingConfig,
    build_basis,
    build_disk_mesh,
    generate_realizations,
    mismatch_cost,
    rasterize_phantom,
    run_descent,
    tag_electrodes,
)
from eit_opt.config import DEFAULT_CURRENTS, DEFAULT_INCLUSIONS, ExperimentConfig
from eit_opt.mesh import PhantomSpec


def main() -> None:
    config = ExperimentConfig()
    layout = ElectrodeLayout.equispaced(16)
    print("# mesh element counts (tests/test_mesh.py::GOLDEN_ELEMENTS)")
    for n_v in (12, 48, 96, 176):
        print(f"  n_v={n_v}: {build_disk_mesh(0.1, n_v).n_elements}")

    mesh = tag_electrodes(build_disk_mesh(0.1, 96), layout)
    phantom = PhantomSpec(0.2, 0.4, DEFAULT_INCLUSIONS)
    sigma_true = rasterize_phantom(mesh, phantom, (0.1, 0.6))
    currents = np.array(DEFAULT_CURRENTS)
    u_ini = np.array([-1.0, 1.0] * 8)
    cost = mismatch_cost(sigma_true, u_ini, currents, mesh, layout, SmoothingConfig())
    print("# initial-guess mismatch (tests/test_model.py::test_mismatch_golden_at_initial_guess)")
    print(f"  {cost.total:.12g}")

    basis = build_basis(generate_realizations(mesh, 500, config.seed, 0.2, 0.4), 85.0)
    print("# PCA component count at 85% (tests/test_pca.py::test_golden_component_count)")
    print(f"  n_xi={basis.n_xi} (variance {basis.variance_fraction:.4f}%)")

    stage1 = run_descent(
        "voltage",
        sigma_true,
        u_ini,
        MeasurementSet(u_star=None, currents=currents[None, :]),
        OptConfig(lbfgs_memory=16, max_iters=200),
        mesh,
        layout,
    )
    print("# stage-1 reference (context for acceptance thresholds)")
    print(f"  iterations={stage1.rows[-1].iteration} final cost={stage1.final_cost:.3e}")


if __name__ == "__main__":
    main()
