"""Paired hypothesis testing: Wilcoxon signed-rank and a standardized effect size.

The exact path keeps ties: ranks are mid-ranks, doubled so that every rank is
an integer, and the null distribution of the positive rank sum is built by a
subset-sum count over those doubled ranks. scipy's exact mode refuses tied
samples, which the message-count differences produce all the time.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "InsufficientData",
    "UndefinedEffect",
    "signed_rank_statistic",
    "wilcoxon_signed_rank",
    "effect_size",
    "EXACT_MAX_N",
    "MIN_NONZERO",
]

EXACT_MAX_N = 25
MIN_NONZERO = 6


class InsufficientData(ValueError):
    """Too few nonzero paired differences for the test."""


class UndefinedEffect(ValueError):
    """The paired differences have zero spread."""


def _nonzero(diffs: Iterable[float]) -> np.ndarray:
    d = np.asarray(list(diffs), dtype=float)
    if d.ndim != 1:
        raise ValueError("differences must be one-dimensional")
    if not np.all(np.isfinite(d)):
        raise ValueError("differences must be finite")
    return d[d != 0]


def signed_rank_statistic(diffs: Sequence[float]) -> tuple[int, np.ndarray]:
    """Return ``(2 * W+, doubled mid-ranks)`` for the nonzero differences."""
    d = _nonzero(diffs)
    doubled = np.rint(2 * rankdata(np.abs(d))).astype(np.int64)
    return int(doubled[d > 0].sum()), doubled


def _exact_counts(doubled: np.ndarray) -> np.ndarray:
    """counts[s] = number of sign patterns whose positive doubled ranks sum to s."""
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    reach = 0
    for r in doubled.tolist():
        counts[r:reach + r + 1] = counts[r:reach + r + 1] + counts[:reach + 1]
        reach += r
    return counts


def _exact_p(w2: int, doubled: np.ndarray) -> float:
    counts = _exact_counts(doubled)
    n_patterns = 2 ** len(doubled)
    lower = sum(counts[:w2 + 1])
    upper = sum(counts[w2:])
    tail = min(lower, upper)
    return min(1.0, float(Fraction(2 * tail, n_patterns)))


def _normal_p(w2: int, doubled: np.ndarray) -> float:
    n = len(doubled)
    w = w2 / 2
    mean = n * (n + 1) / 4
    _, tie_sizes = np.unique(doubled, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48
    if var <= 0:
        return 1.0
    z = max(abs(w - mean) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2)))


def wilcoxon_signed_rank(diffs: Iterable[float], method: str = "auto") -> float:
    """Two-sided p-value of the Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped. ``method`` is ``"exact"``, ``"normal"`` or
    ``"auto"`` (exact up to 25 nonzero pairs). Accepts PairedSample objects
    as well as plain numbers.
    """
    values = [getattr(x, "difference", x) for x in diffs]
    d = _nonzero(values)
    if len(d) < MIN_NONZERO:
        raise InsufficientData(f"need at least {MIN_NONZERO} nonzero differences, got {len(d)}")
    if method == "auto":
        method = "exact" if len(d) <= EXACT_MAX_N else "normal"
    w2, doubled = signed_rank_statistic(d)
    if method == "exact":
        return _exact_p(w2, doubled)
    if method == "normal":
        return _normal_p(w2, doubled)
    raise ValueError(f"unknown method {method!r}")


def effect_size(diffs: Iterable[float]) -> float:
    """Standardized paired mean difference: mean / sample standard deviation."""
    d = np.asarray([getattr(x, "difference", x) for x in diffs], dtype=float)
    if len(d) < 2:
        raise UndefinedEffect("need at least two pairs")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise UndefinedEffect("paired differences have zero variance")
    return float(np.mean(d)) / sd
