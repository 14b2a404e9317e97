"""Aggregated Monte Carlo statistics and pass/fail comparison records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["EstimatorResult", "ComparisonReport", "compare"]


@dataclass(frozen=True)
class EstimatorResult:
    """Summary of one Monte Carlo run.

    ``n_samples`` counts all requested paths; ``n_rejected`` counts the
    subset dropped by the rejection policy (zero normalizer). ``mean`` and
    ``std_error`` are computed over the accepted paths only.
    """

    mean: float
    std_error: float
    n_samples: int
    n_rejected: int = 0
    diagnostics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_rejected > self.n_samples:
            raise ValueError("n_rejected cannot exceed n_samples")
        if self.n_samples < 0 or self.n_rejected < 0:
            raise ValueError("sample counts must be nonnegative")

    @property
    def n_used(self) -> int:
        return self.n_samples - self.n_rejected

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "n_rejected": self.n_rejected,
            "diagnostics": dict(sorted(self.diagnostics.items())),
        }


@dataclass(frozen=True)
class ComparisonReport:
    """Two-sided comparison |lhs - rhs| <= threshold_se * combined SE + tolerance_abs."""

    lhs_mean: float
    rhs_mean: float
    combined_se: float
    z_score: float
    passed: bool
    threshold_se: float = 3.0
    tolerance_abs: float = 0.0
    label: str = ""

    def __post_init__(self) -> None:
        # Keep the stored verdict consistent with the stored numbers.
        expect = _verdict(
            self.lhs_mean, self.rhs_mean, self.combined_se, self.threshold_se, self.tolerance_abs
        )
        if bool(self.passed) is not expect:
            raise ValueError("pass flag inconsistent with z_score and threshold")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "lhs_mean": self.lhs_mean,
            "rhs_mean": self.rhs_mean,
            "combined_se": self.combined_se,
            "z_score": self.z_score,
            "threshold_se": self.threshold_se,
            "tolerance_abs": self.tolerance_abs,
            "passed": self.passed,
        }


def _verdict(lhs: float, rhs: float, se: float, threshold_se: float, tol_abs: float) -> bool:
    return abs(lhs - rhs) <= threshold_se * se + tol_abs


def compare(
    lhs: EstimatorResult | float,
    rhs: EstimatorResult | float,
    threshold_se: float = 3.0,
    tolerance_abs: float = 0.0,
    label: str = "",
) -> ComparisonReport:
    """Build a ComparisonReport from estimator results and/or exact reals.

    Exact reals contribute zero variance. The z-score is reported as inf when
    the combined standard error vanishes and the means differ.
    """
    lm = lhs.mean if isinstance(lhs, EstimatorResult) else float(lhs)
    rm = rhs.mean if isinstance(rhs, EstimatorResult) else float(rhs)
    lv = lhs.std_error**2 if isinstance(lhs, EstimatorResult) else 0.0
    rv = rhs.std_error**2 if isinstance(rhs, EstimatorResult) else 0.0
    se = math.sqrt(lv + rv)
    diff = lm - rm
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return ComparisonReport(
        lhs_mean=lm,
        rhs_mean=rm,
        combined_se=se,
        z_score=z,
        passed=_verdict(lm, rm, se, threshold_se, tolerance_abs),
        threshold_se=threshold_se,
        tolerance_abs=tolerance_abs,
        label=label,
    )
