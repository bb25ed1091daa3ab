"""Discrete bending-torsion rods: energy, constrained descent, diagnostics."""

from .elliptic import complete_E, complete_K, figure_eight_modulus, incomplete_E, jacobi_am_cn
from .flow import (
    ConstraintSet,
    DiagnosticsRecord,
    FlowEngine,
    NonFiniteEnergyError,
    SingularSystemError,
    StepResult,
    build_constraints,
    flow_step,
    run_flow,
    solve_kkt,
)
from .mesh import (
    DirectorField,
    FormMatrix,
    HermiteCurve,
    Mesh1D,
    assemble_form,
    build_mesh,
    eval_state,
    interpolate_smooth,
    qh_average,
)
from .model import (
    BoundaryCondition,
    EnergyBreakdown,
    FlowConfig,
    RodState,
    directional_derivative,
    energy_breakdown,
    nodal_violation,
    theta,
)
from .scenarios import (
    Scenario,
    build_scenario,
    f8_sweep_values,
    make_circle_rod,
    make_clamped_cosine,
    make_figure_eight,
    make_straight_piecewise_twist,
    michell_sweep_values,
    perturb_out_of_plane,
    zajac_threshold,
)
from .selfavoid import TangentPointParams, min_strand_distance, tp_energy, tp_gradient, tp_radius
from .topology import (
    TopologyReport,
    calugareanu_residual,
    gauss_link_integral,
    linking_number,
    topology_report,
    total_twist,
    twist_rate_profile,
    uniformity_quotient,
    writhe,
)

__version__ = "0.1.0"
