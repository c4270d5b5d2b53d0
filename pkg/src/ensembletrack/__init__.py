"""Trajectory estimation for ensembles of indistinguishable linear systems.

Ensembles observed only through unordered per-time output snapshots are
tracked by solving a transport problem whose step cost is the minimum
control energy of the prior dynamics. Point-cloud snapshots go through a
discretized multi-frame transport solver; Gaussian snapshots go through a
dedicated mean spline plus covariance semidefinite program.
"""

from .validation import (
    ConvergenceError,
    DualInfeasibleError,
    EnsembleTrackError,
    SingularMatrixError,
    ValidationError,
)
from .linalg import linear_solve, matrix_exp, psd_project, sym_eig, symmetrize
from .dynamics import (
    BridgePair,
    LinearSystem,
    StepKernel,
    bridge,
    bridge_from_kernel,
    controllability_rank,
    gramian,
    make_kernel,
    step_cost,
    step_cost_matrix,
)
from .discrete import (
    BruteForceResult,
    ChainSolution,
    CouplingChain,
    DiscreteMeasure,
    DualPotentials,
    GapReport,
    GluedChain,
    GridConfig,
    StateGrid,
    TrajectoryEstimate,
    brute_force_assignment,
    build_state_grids,
    duality_gap,
    extract_trajectories,
    glue_chain,
    solve_chain,
)
from .gaussian import (
    GaussianSequence,
    MeanSpline,
    OutputCostForm,
    SplittingOptions,
    StateCovariancePlan,
    covariance_sdp,
    covariance_sdp_joint,
    gaussian_flow,
    mean_spline,
    output_cost_matrix,
    output_form_from_kernels,
)
from .simulate import EnsembleSimulation, simulate_ensemble
from .estimators import DiscreteEnsembleTracker, GaussianEnsembleTracker
from .problem_io import (
    FORMAT_VERSION,
    ProblemSpec,
    TrackingResult,
    emit_plot_data,
    load_problem,
    load_result,
    save_problem,
    save_result,
)

__version__ = "0.1.0"

__all__ = [
    "EnsembleTrackError",
    "ValidationError",
    "SingularMatrixError",
    "ConvergenceError",
    "DualInfeasibleError",
    "sym_eig",
    "matrix_exp",
    "psd_project",
    "linear_solve",
    "symmetrize",
    "LinearSystem",
    "StepKernel",
    "BridgePair",
    "controllability_rank",
    "gramian",
    "make_kernel",
    "step_cost",
    "step_cost_matrix",
    "bridge",
    "bridge_from_kernel",
    "DiscreteMeasure",
    "StateGrid",
    "GridConfig",
    "CouplingChain",
    "DualPotentials",
    "ChainSolution",
    "GapReport",
    "TrajectoryEstimate",
    "BruteForceResult",
    "GluedChain",
    "build_state_grids",
    "solve_chain",
    "brute_force_assignment",
    "duality_gap",
    "extract_trajectories",
    "glue_chain",
    "GaussianSequence",
    "MeanSpline",
    "OutputCostForm",
    "StateCovariancePlan",
    "SplittingOptions",
    "mean_spline",
    "output_cost_matrix",
    "output_form_from_kernels",
    "covariance_sdp",
    "covariance_sdp_joint",
    "gaussian_flow",
    "EnsembleSimulation",
    "simulate_ensemble",
    "DiscreteEnsembleTracker",
    "GaussianEnsembleTracker",
    "FORMAT_VERSION",
    "ProblemSpec",
    "TrackingResult",
    "load_problem",
    "save_problem",
    "load_result",
    "save_result",
    "emit_plot_data",
    "__version__",
]
