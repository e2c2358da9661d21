"""Optimal control of linear and affine hybrid systems with time- or state-triggered resets."""

from .errors import (
    BeatingEncountered,
    BlockedState,
    ConfigError,
    DivergenceError,
    HybridLQRError,
    IllConditioned,
    NoExtremalJump,
    NonConvergence,
    SingularJumpMap,
    SuspectedZeno,
    TangentialImpact,
)
from .guard_analysis import beating_flag, has_war, invariant_guard_report, is_trivially_blocking
from .hybrid_system import (
    AffineHybridSystem,
    HybridTrajectory,
    JumpRecord,
    LinearHybridSystem,
    apply_reset,
    first_return_time,
    flow_arc,
    simulate,
)
from .lqr_core import QuadraticCost, RiccatiSolution, solve_riccati_backward, tilde
from .spatial_hlqr import SpatialOptions, SpatialSolveReport, multiplier_coefficients, solve_spatial
from .temporal_hlqr import JumpSchedule, reconstruct_temporal, solve_temporal_costate

__version__ = "0.1.0"

__all__ = [
    "AffineHybridSystem",
    "BeatingEncountered",
    "BlockedState",
    "ConfigError",
    "DivergenceError",
    "HybridLQRError",
    "HybridTrajectory",
    "IllConditioned",
    "JumpRecord",
    "JumpSchedule",
    "LinearHybridSystem",
    "NoExtremalJump",
    "NonConvergence",
    "QuadraticCost",
    "RiccatiSolution",
    "SingularJumpMap",
    "SpatialOptions",
    "SpatialSolveReport",
    "SuspectedZeno",
    "TangentialImpact",
    "apply_reset",
    "beating_flag",
    "first_return_time",
    "flow_arc",
    "has_war",
    "invariant_guard_report",
    "is_trivially_blocking",
    "multiplier_coefficients",
    "reconstruct_temporal",
    "simulate",
    "solve_riccati_backward",
    "solve_spatial",
    "solve_temporal_costate",
    "tilde",
]
