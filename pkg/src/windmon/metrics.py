"""Forecast evaluation: point errors, interval coverage, and calibration.

Coverage uses central Gaussian intervals: an observation counts as covered at
level p when it lies within z * stddev of the predicted mean, with z the
standard-normal quantile at (1+p)/2. The quantile comes from a rational
approximation polished by one Halley step, accurate to a few ulp, so no
external stats dependency is needed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError

# Acklam's inverse normal CDF approximation (relative error < 1.2e-9 before
# refinement).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Standard normal quantile (inverse CDF), accurate to ~1e-15."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile argument must be in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # one Halley refinement against the exact CDF
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def _as_arrays(preds) -> tuple[np.ndarray, np.ndarray]:
    """Accept a list of GaussianPrediction or an (means, stddevs) pair."""
    if isinstance(preds, tuple) and len(preds) == 2:
        means = np.asarray(preds[0], dtype=np.float64)
        stds = np.asarray(preds[1], dtype=np.float64)
    else:
        means = np.asarray([p.mean for p in preds], dtype=np.float64)
        stds = np.asarray([p.stddev for p in preds], dtype=np.float64)
    return means, stds


def point_errors(preds, y, rated_power: float) -> tuple[float, float, float, float]:
    """(rmse, mae, nrmse%, nmae%): mean-prediction errors in kW and as
    percentages of the rated power."""
    if rated_power <= 0:
        raise DomainError("rated_power must be positive")
    means, _ = _as_arrays(preds)
    y = np.asarray(y, dtype=np.float64)
    if means.shape != y.shape:
        raise ShapeError(f"{means.shape[0]} predictions vs {y.shape[0]} observations")
    if len(y) == 0:
        raise ShapeError("need at least one observation")
    resid = y - means
    rmse = float(np.sqrt(np.mean(resid**2)))
    mae = float(np.mean(np.abs(resid)))
    return rmse, mae, 100.0 * rmse / rated_power, 100.0 * mae / rated_power


def coverage(preds, y, level: float) -> float:
    """Fraction of observations inside the central interval at ``level``."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must be in (0, 1), got {level}")
    means, stds = _as_arrays(preds)
    y = np.asarray(y, dtype=np.float64)
    if means.shape != y.shape:
        raise ShapeError(f"{means.shape[0]} predictions vs {y.shape[0]} observations")
    z = normal_quantile(0.5 * (1.0 + level))
    return float(np.mean(np.abs(y - means) <= z * stds))


@dataclass(frozen=True)
class CalibrationBin:
    nominal: float
    empirical: float

    @property
    def error(self) -> float:
        return self.empirical - self.nominal


def calibration_levels(n_bins: int = 20) -> list[float]:
    """Even grid of confidence levels with 0.95 and 0.99 always present.

    For the default 20 bins this is 0.05, 0.10, ..., 0.95 plus 0.99.
    """
    if n_bins < 2:
        raise DomainError("n_bins must be at least 2")
    levels = [i / n_bins for i in range(1, n_bins)]
    for extra in (0.95, 0.99):
        if not any(abs(l - extra) < 1e-12 for l in levels):
            levels.append(extra)
    return sorted(levels)


def calibration_curve(preds, y, n_bins: int = 20) -> tuple[list[CalibrationBin], float]:
    """Empirical vs nominal coverage over the level grid.

    Returns the per-level bins and the maximum calibration error in percent.
    """
    means, stds = _as_arrays(preds)
    y = np.asarray(y, dtype=np.float64)
    abs_z = np.abs(y - means) / stds
    bins = []
    for level in calibration_levels(n_bins):
        z = normal_quantile(0.5 * (1.0 + level))
        bins.append(CalibrationBin(nominal=level, empirical=float(np.mean(abs_z <= z))))
    mce = 100.0 * max(abs(b.error) for b in bins)
    return bins, mce


@dataclass
class EvaluationReport:
    """Bundle of point metrics, coverage probabilities, and calibration."""

    rmse: float
    mae: float
    nrmse: float  # percent of rated power
    nmae: float
    coverage: dict[float, float]
    calibration_bins: list[CalibrationBin]
    mce: float  # percent
    n: int
    rated_power: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rated_power_kw": self.rated_power,
            "rmse_kw": self.rmse,
            "mae_kw": self.mae,
            "nrmse_pct": self.nrmse,
            "nmae_pct": self.nmae,
            "mce_pct": self.mce,
            "coverage": {f"{k:g}": v for k, v in self.coverage.items()},
            "calibration": [
                {"nominal": b.nominal, "empirical": b.empirical, "error": b.error}
                for b in self.calibration_bins
            ],
            **self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def calibration_csv(self) -> str:
        lines = ["nominal_level,empirical_coverage,calibration_error"]
        for b in self.calibration_bins:
            lines.append(f"{b.nominal!r},{b.empirical!r},{b.error!r}")
        return "\n".join(lines) + "\n"


def evaluate(
    preds,
    y,
    rated_power: float,
    coverage_levels: tuple[float, ...] = (0.95, 0.99),
    n_bins: int = 20,
) -> EvaluationReport:
    """Full evaluation of a prediction set against observations."""
    rmse, mae, nrmse, nmae = point_errors(preds, y, rated_power)
    cov = {level: coverage(preds, y, level) for level in coverage_levels}
    bins, mce = calibration_curve(preds, y, n_bins)
    y = np.asarray(y, dtype=np.float64)
    return EvaluationReport(
        rmse=rmse, mae=mae, nrmse=nrmse, nmae=nmae,
        coverage=cov, calibration_bins=bins, mce=mce,
        n=len(y), rated_power=rated_power,
    )
