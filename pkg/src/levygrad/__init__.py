"""Monte Carlo gradient estimation for SDEs driven by time-changed Brownian motion.

The package simulates dX_t = b_t(X_t) dt + sigma_t(X_t) dW_{S_t}, where the
clock S is an increasing pure-jump Levy process, and evaluates an unbiased
Malliavin-weight estimator of directional semigroup gradients grad_v P_t f
for bounded measurable f, together with independent oracles (plain semigroup
estimation, finite differences with common random numbers, isometry and
truncation identities) used to validate it.
"""

from .subordinator import (
    BernsteinSpec,
    JumpPath,
    FirstPassage,
    QuadratureDivergenceError,
    sample_jump_path,
    sample_terminal_values,
    truncate_jumps,
    first_passage,
    inverse_moment,
    tail_mass,
    dropped_mass_rate,
    default_eps_cut,
    stable_median_s1,
)
from .coefficients import CoefficientField, directional_sigma_derivative, catalog
from .flow import (
    FlowState,
    PathRealization,
    BlowUpError,
    sample_increments,
    evolve_drift,
    apply_jump,
    simulate_flow,
)
from .bismut import (
    ClockSpec,
    BismutWeight,
    RejectedPathError,
    accumulate_weight,
    estimate_gradient,
    estimate_gradient_fixed_clock,
    default_level_R,
)
from .results import EstimatorResult, ComparisonReport, compare
from .validate import (
    make_observable,
    estimate_pt,
    estimate_pt_power,
    fd_gradient,
    check_gradient_bound,
    counterexample_moments,
    burkholder_isometry_check,
    truncation_convergence_check,
)
from .streams import substream

__version__ = "0.1.0"

__all__ = [
    "BernsteinSpec",
    "JumpPath",
    "FirstPassage",
    "QuadratureDivergenceError",
    "sample_jump_path",
    "sample_terminal_values",
    "truncate_jumps",
    "first_passage",
    "inverse_moment",
    "tail_mass",
    "dropped_mass_rate",
    "default_eps_cut",
    "stable_median_s1",
    "CoefficientField",
    "directional_sigma_derivative",
    "catalog",
    "FlowState",
    "PathRealization",
    "BlowUpError",
    "sample_increments",
    "evolve_drift",
    "apply_jump",
    "simulate_flow",
    "ClockSpec",
    "BismutWeight",
    "RejectedPathError",
    "accumulate_weight",
    "estimate_gradient",
    "estimate_gradient_fixed_clock",
    "default_level_R",
    "EstimatorResult",
    "ComparisonReport",
    "compare",
    "make_observable",
    "estimate_pt",
    "estimate_pt_power",
    "fd_gradient",
    "check_gradient_bound",
    "counterexample_moments",
    "burkholder_isometry_check",
    "truncation_convergence_check",
    "substream",
]
