"""Model predictive regulation for discrete-time SISO plants driven by an exosystem.

The off-line pipeline builds polynomial approximations of the tracking
manifold, feedforward, optimal cost and optimal feedback; the on-line part
uses them as terminal cost and terminal feedback of a receding-horizon
optimizer.
"""

__version__ = "0.1.0"

from .errors import (
    DivergedRolloutError,
    InconsistentRelativeDegreeError,
    MetricError,
    MprlabError,
    NumericError,
    ResonanceError,
    SolverError,
    StructureError,
    SynthesisError,
    UndefinedRelativeDegreeError,
)
from .model import SystemModel, linearize, structure_report
from .mpr import MprConfig, mpr_run, shift_warm_start, solve_finite_horizon
from .poly import PolyVector, TruncatedPoly
from .regulation import solve_fbi, solve_francis_linear
from .scenarios import scenario_linear_example, scenario_pendulum
from .sim import rollout_polynomial, steady_state_metrics
from .terminal import (
    albrekht_correct,
    assemble_terminal,
    dp_residual_order,
    estimate_lyapunov_region,
    solve_dare,
    synthesize_terminal,
    transverse_quadratic_cost,
)

__all__ = [
    "DivergedRolloutError",
    "InconsistentRelativeDegreeError",
    "MetricError",
    "MprConfig",
    "MprlabError",
    "NumericError",
    "PolyVector",
    "ResonanceError",
    "SolverError",
    "StructureError",
    "SynthesisError",
    "SystemModel",
    "TruncatedPoly",
    "UndefinedRelativeDegreeError",
    "albrekht_correct",
    "assemble_terminal",
    "dp_residual_order",
    "estimate_lyapunov_region",
    "linearize",
    "mpr_run",
    "rollout_polynomial",
    "scenario_linear_example",
    "scenario_pendulum",
    "shift_warm_start",
    "solve_dare",
    "solve_fbi",
    "solve_finite_horizon",
    "solve_francis_linear",
    "steady_state_metrics",
    "structure_report",
    "synthesize_terminal",
    "transverse_quadratic_cost",
]
