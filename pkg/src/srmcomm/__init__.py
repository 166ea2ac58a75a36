"""Robust commutation design and closed-loop evaluation for switched reluctance motors."""

from .errors import ConfigurationError, DesignError, ModelError, SolverError
from .kernel_basis import (
    KernelBasisSpec,
    basis_row,
    chordal_distance,
    coil_basis,
    matern_kernel,
)
from .srm_model import (
    FourierTorqueBasis,
    ProbabilisticSrmModel,
    RadialTorqueBasis,
    SrmRealization,
    load_model,
    make_nominal_model,
    realization_from_noise,
    sample_srm,
    save_model,
    torque_basis,
    torque_gain,
    torque_gain_profile,
)
from .ripple_objective import (
    ErrorGrid,
    QpProblem,
    assemble_qp,
    constraint_matrix,
    error_distribution,
    eval_cost,
    mc_cost_oracle,
    stacked_error_map,
)
from .qp_solver import (
    KktResiduals,
    QpSolution,
    QpStatus,
    SolverSettings,
    check_kkt,
    projected_gradient_reference,
    solve_qp,
)
from .commutation import (
    CommutationParams,
    ConventionalCommutation,
    SaturationLimits,
    TsfSpec,
    commutation_profile,
    eval_commutation,
    eval_conventional,
    export_lookup_table,
    realized_torque,
    torque_mismatch_profile,
    torque_shares,
)
from .closed_loop_sim import (
    PerfectTorqueResponse,
    PidDiscrete,
    PlantDiscrete,
    ReferenceSpec,
    SimResult,
    TabulatedTorqueResponse,
    build_reference,
    compute_e_rms,
    design_pid,
    discretize_plant,
    simulate_tracking,
)
from .config import StudyConfig, load_config

__version__ = "0.1.0"
