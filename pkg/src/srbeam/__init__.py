"""Robust transmit beamforming for backscatter-assisted multiuser downlinks.

Minimizes base-station transmit power subject to per-user outage limits on
the cellular links (robust to the backscatter-induced channel uncertainty)
and sum-rate floors for the backscatter devices, via a lifted semidefinite
relaxation with rank-one recovery. Includes channel/covariance builders,
Monte-Carlo validation, experiment sweeps, and a CLI (``srbeam``).
"""

from .channel import (
    ChannelSet,
    ConfigError,
    CovarianceSet,
    SystemConfig,
    build_clustered_channels,
    covariance_doa,
    covariance_exact,
    covariance_set_doa,
    covariance_set_exact,
    load_system_config,
    parse_system_config,
    path_loss,
    sample_general_channels,
    steering_vector,
)
from .experiments import (
    ExperimentSpec,
    ResultRow,
    emit_csv,
    feasibility_curve,
    load_experiment_spec,
    mrt_baseline,
    run_trial,
    scenario_with,
    sweep_run,
)
from .numerics import (
    IndefiniteMatrixError,
    NotHermitianError,
    chi_square_inv_cdf,
    hermitian_sqrt,
    leading_eigpair,
    project_psd,
    regularized_gamma_p,
    require_hermitian,
)
from .robust import (
    RobustProblemData,
    build_robust_data,
    iot_trace_lhs,
    lmi_block,
    lmi_feasible,
    sphere_radius,
)
from .solver import (
    BeamformingSolution,
    ConicProgram,
    ConicSolution,
    InternalSolverError,
    NotRankOneError,
    RandomizationFailedError,
    SolverParams,
    complexity_estimate,
    conic_solve,
    dc_refine,
    extract_beamformer,
    gaussian_randomization,
    minimize_power,
    rank_gap,
)
from .srmodel import (
    FeasibilityReport,
    cellular_rate,
    cellular_sinr,
    check_feasibility,
    iot_device_rate,
    iot_device_sinr,
    iot_sum_rate,
    outage_probability_mc,
    total_power,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelSet",
    "ConfigError",
    "CovarianceSet",
    "SystemConfig",
    "build_clustered_channels",
    "covariance_doa",
    "covariance_exact",
    "covariance_set_doa",
    "covariance_set_exact",
    "load_system_config",
    "parse_system_config",
    "path_loss",
    "sample_general_channels",
    "steering_vector",
    "ExperimentSpec",
    "ResultRow",
    "emit_csv",
    "feasibility_curve",
    "load_experiment_spec",
    "mrt_baseline",
    "run_trial",
    "scenario_with",
    "sweep_run",
    "IndefiniteMatrixError",
    "NotHermitianError",
    "chi_square_inv_cdf",
    "hermitian_sqrt",
    "leading_eigpair",
    "project_psd",
    "regularized_gamma_p",
    "require_hermitian",
    "RobustProblemData",
    "build_robust_data",
    "iot_trace_lhs",
    "lmi_block",
    "lmi_feasible",
    "sphere_radius",
    "BeamformingSolution",
    "ConicProgram",
    "ConicSolution",
    "InternalSolverError",
    "NotRankOneError",
    "RandomizationFailedError",
    "SolverParams",
    "complexity_estimate",
    "conic_solve",
    "dc_refine",
    "extract_beamformer",
    "gaussian_randomization",
    "minimize_power",
    "rank_gap",
    "FeasibilityReport",
    "cellular_rate",
    "cellular_sinr",
    "check_feasibility",
    "iot_device_rate",
    "iot_device_sinr",
    "iot_sum_rate",
    "outage_probability_mc",
    "total_power",
    "__version__",
]
