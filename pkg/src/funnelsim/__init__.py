"""Trajectory optimization, TVLQR stabilization, and probabilistic funnel
estimation for planar free-floating robots."""

from .dynamics import Link, Linearization, MultibodyModel, Payload, PointMass, linearize
from .errors import (
    ConfigError,
    EstimationError,
    FunnelsimError,
    IndeterminateError,
    NumericalError,
    SolverError,
)
from .funnel import (
    Ellipse2D,
    Funnel,
    composable,
    containment_margin,
    contains,
    load_funnel,
    project,
    save_funnel,
)
from .roa import (
    EllipsoidSampler,
    EstimationConfig,
    VerificationReport,
    check_terminal_handoff,
    estimate_funnel,
    rho_final,
    sample_ellipsoid,
    sample_unit_sphere,
    verify_funnel,
    wilson_interval,
)
from .scenarios import (
    Scenario,
    detumble_scenario,
    freeflyer_scenario,
    initial_state_grid,
    load_scenario,
    post_capture_state,
    rigid_rotation_state,
)
from .sim import (
    FuelBudget,
    RolloutConfig,
    integrate,
    nominal_fuel,
    rollout,
    rollout_batch,
    save_rollout,
)
from .trajopt import (
    CostWeights,
    TrajBounds,
    Trajectory,
    TranscribedProblem,
    check_feasibility,
    load_trajectory,
    save_trajectory,
    solve,
    trajectory_fingerprint,
    transcribe,
)
from .tvlqr import TvlqrPolicy, load_policy, save_policy, solve_care, solve_tvlqr

__version__ = "0.1.0"

__all__ = [
    "Link",
    "Linearization",
    "MultibodyModel",
    "Payload",
    "PointMass",
    "linearize",
    "ConfigError",
    "EstimationError",
    "FunnelsimError",
    "IndeterminateError",
    "NumericalError",
    "SolverError",
    "Ellipse2D",
    "Funnel",
    "composable",
    "containment_margin",
    "contains",
    "load_funnel",
    "project",
    "save_funnel",
    "EllipsoidSampler",
    "EstimationConfig",
    "VerificationReport",
    "check_terminal_handoff",
    "estimate_funnel",
    "rho_final",
    "sample_ellipsoid",
    "sample_unit_sphere",
    "verify_funnel",
    "wilson_interval",
    "Scenario",
    "detumble_scenario",
    "freeflyer_scenario",
    "initial_state_grid",
    "load_scenario",
    "post_capture_state",
    "rigid_rotation_state",
    "FuelBudget",
    "RolloutConfig",
    "integrate",
    "nominal_fuel",
    "rollout",
    "rollout_batch",
    "save_rollout",
    "CostWeights",
    "TrajBounds",
    "Trajectory",
    "TranscribedProblem",
    "check_feasibility",
    "load_trajectory",
    "save_trajectory",
    "solve",
    "trajectory_fingerprint",
    "transcribe",
    "TvlqrPolicy",
    "load_policy",
    "save_policy",
    "solve_care",
    "solve_tvlqr",
    "__version__",
]
