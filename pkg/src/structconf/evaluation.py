"""Error-detection ranking, calibration and sample-size bounds for confidence scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_BINS = 20


class UndefinedMetric(ValueError):
    pass


@dataclass(frozen=True)
class RankedUnit:
    nu: float
    is_error: bool
    tie_key: int = 0


@dataclass(frozen=True)
class CalibrationBin:
    index: int
    count: int
    accuracy: float | None

    @property
    def center(self) -> float:
        return self.index / N_BINS - 1 / (2 * N_BINS)


def _as_arrays(units, is_error=None, tie_key=None):
    if is_error is None:
        units = list(units)
        nu = np.array([u.nu for u in units], dtype=float)
        err = np.array([u.is_error for u in units], dtype=bool)
        key = np.array([u.tie_key for u in units])
    else:
        nu = np.asarray(units, dtype=float)
        err = np.asarray(is_error, dtype=bool)
        key = np.arange(nu.size) if tie_key is None else np.asarray(tie_key)
    return nu, err, key


def ranking(nu, tie_key) -> np.ndarray:
    """Indices ordered least confident first; ties resolved by ``tie_key``."""
    return np.lexsort((tie_key, nu))


def average_precision(units, is_error=None, tie_key=None) -> float:
    """Mean precision at the rank of every erroneous unit.

    Accepts either a sequence of :class:`RankedUnit` or parallel arrays of
    confidence values and error flags (ties then follow input order).
    """
    nu, err, key = _as_arrays(units, is_error, tie_key)
    if not err.any():
        raise UndefinedMetric("average precision needs at least one error")
    hits = err[ranking(nu, key)]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def precision_recall_curve(units, is_error=None, tie_key=None, levels=None) -> list[tuple[float, float]]:
    """Precision once each recall level of the errors has been retrieved."""
    nu, err, key = _as_arrays(units, is_error, tie_key)
    if not err.any():
        raise UndefinedMetric("precision-recall needs at least one error")
    if levels is None:
        levels = [round(0.1 * i, 1) for i in range(1, 11)]
    hits = err[ranking(nu, key)]
    ranks = np.flatnonzero(hits) + 1
    total = ranks.size
    out = []
    for level in levels:
        needed = max(1, math.ceil(level * total - 1e-9))
        out.append((float(level), needed / float(ranks[needed - 1])))
    return out


def bin_index(nu: np.ndarray) -> np.ndarray:
    """1-based bin of each value; 1.0 falls in the top bin."""
    return np.minimum(np.floor(np.asarray(nu) * N_BINS).astype(np.int64), N_BINS - 1) + 1


def calibration_bins(nu, is_correct) -> list[CalibrationBin]:
    nu = np.asarray(nu, dtype=float)
    correct = np.asarray(is_correct, dtype=bool)
    if nu.size and (np.any(nu < 0) | np.any(nu > 1) | np.any(np.isnan(nu))):
        raise ValueError("calibration needs confidence values in [0, 1]")
    idx = bin_index(nu)
    bins = []
    for j in range(1, N_BINS + 1):
        mask = idx == j
        count = int(mask.sum())
        acc = float(correct[mask].mean()) if count else None
        bins.append(CalibrationBin(j, count, acc))
    return bins


def calibration_rmse(bins) -> float:
    total = sum(b.count for b in bins)
    if total == 0:
        raise UndefinedMetric("all calibration bins are empty")
    sq = sum(b.count * (b.center - b.accuracy) ** 2 for b in bins if b.count)
    return math.sqrt(sq / total)


def chernoff_k(epsilon: float, delta: float, N: int) -> int:
    """Smallest K with 2N·exp(−2Kε²) ≤ δ."""
    if not (0 < epsilon < 1 and 0 < delta < 1 and N >= 1):
        raise ValueError("need 0 < epsilon, delta < 1 and N >= 1")
    return math.ceil(math.log(2 * N / delta) / (2 * epsilon**2))


def bernstein_epsilon(gamma: float, K: int, N: int, delta: float) -> float:
    """Half-width of the Bernstein interval for a unit with correctness probability ``gamma``."""
    if not 0 <= gamma <= 1 or K < 1 or N < 1 or not 0 < delta < 1:
        raise ValueError("need gamma in [0, 1], K, N >= 1 and 0 < delta < 1")
    log_term = math.log(2 * N / delta)
    a = 2.0 * log_term / 3.0
    return (a + math.sqrt(a * a + 8 * K * log_term * gamma * (1 - gamma))) / (2 * K)
