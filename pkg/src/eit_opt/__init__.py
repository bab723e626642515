"""Electrode-driven conductivity imaging on a 2D disk.

The package solves the complete-electrode forward model with P1 finite
elements, computes adjoint-based cost gradients, and reconstructs
piecewise-constant conductivity by projected descent over a PCA-reduced
control space with Tikhonov regularization. A command-line driver
(``eit-opt``) reproduces the three-stage synthetic experiment.
"""

from .fields import ConductivityField, require_zero_sum, zero_sum_defect
from .mesh import (
    DiskMesh,
    ElectrodeLayout,
    PhantomSpec,
    build_disk_mesh,
    electrode_coverage,
    rasterize_phantom,
    tag_electrodes,
    write_vtk,
)
from .fem import (
    SmoothingConfig,
    SolverError,
    SparseSpdSystem,
    assemble,
    electrode_integral,
    electrode_weight,
    sobolev_smooth,
    solve_adjoint,
    solve_spd,
    solve_state,
    solve_unit_voltage,
)
from .model import (
    CostBreakdown,
    MeasurementSet,
    electrode_currents,
    mismatch_cost,
    rotate_voltages,
    rotated_position,
    rotation_cost,
    single_pattern_cost,
    solution_norms,
    synthesize_rotation_data,
)
from .gradient import (
    GradientCheckReport,
    GradientPair,
    check_reduced_gradient,
    check_sigma_gradient,
    check_voltage_gradient,
    rotation_gradient,
    single_pattern_gradient,
)
from .pca import (
    PcaBasis,
    RealizationSet,
    SplitMix64,
    build_basis,
    generate_realizations,
    load_basis,
    project_gradient,
    save_basis,
    to_physical,
    to_reduced,
)
from .optimizer import (
    OptConfig,
    OptimizerError,
    RunRecord,
    line_search,
    project_sigma,
    project_voltages,
    run_descent,
    sweep_beta,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config, serialize_config

__version__ = "0.1.0"
