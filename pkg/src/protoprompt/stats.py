"""Cross-validation aggregation and the paired Wilcoxon signed-rank test.

The Wilcoxon p-value is exact (full null distribution) for n <= 25 pairs,
including tied magnitudes via midranks — zero differences are discarded
first, per the classic treatment. Larger samples use the normal
approximation with tie-variance correction and a 0.5 continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError

EXACT_LIMIT = 25


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float  # unbiased (ddof=1) over fold means
    folds_present: int
    folds_expected: int

    @property
    def complete(self) -> bool:
        return self.folds_present == self.folds_expected

    def cell(self, scale: float = 1.0, digits: int = 2) -> str:
        """Render as the usual ``mean±std`` table cell."""
        note = "" if self.complete else f" ({self.folds_expected - self.folds_present} folds missing)"
        return f"{self.mean * scale:.{digits}f}±{self.std * scale:.{digits}f}{note}"


def crossval_aggregate(fold_scores: Sequence[float], k: int) -> Aggregate:
    """Mean and sample std over fold-level scores; short lists are annotated, not hidden."""
    if k < 2:
        raise InvalidArgumentError(f"need k >= 2 folds, got k={k}")
    scores = [float(s) for s in fold_scores]
    if len(scores) == 0:
        raise InvalidArgumentError("no fold scores present")
    if len(scores) > k:
        raise InvalidArgumentError(f"got {len(scores)} fold scores for k={k}")
    mean = float(np.mean(scores))
    std = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    return Aggregate(mean, std, folds_present=len(scores), folds_expected=k)


def _exact_two_sided_p(double_ranks: list[int], w_plus_doubled: int) -> float:
    """Exact p over all sign assignments, on the doubled-rank integer lattice.

    Midranks are multiples of 1/2, so doubling makes every rank an integer
    and the distribution of 2-W+ a finite lattice we can fold over.
    """
    total = sum(double_ranks)
    counts = np.zeros(total + 1, dtype=object)  # object: exact big-int counts
    counts[0] = 1
    for r in double_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    n_assignments = 1 << len(double_ranks)
    p_le = sum(counts[: w_plus_doubled + 1]) / n_assignments
    p_ge = sum(counts[w_plus_doubled:]) / n_assignments
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> float:
    """Two-sided p-value for paired samples; all-zero differences give p = 1.0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgumentError("samples must be equal-length 1-D sequences")
    if len(x) < 5:
        raise InvalidArgumentError(f"need at least 5 pairs, got {len(x)}")
    diffs = x - y
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return 1.0
    ranks = rankdata(np.abs(diffs))  # midranks for ties
    w_plus = float(ranks[diffs > 0].sum())

    if n <= EXACT_LIMIT:
        double_ranks = [int(round(2.0 * r)) for r in ranks]
        return _exact_two_sided_p(double_ranks, int(round(2.0 * w_plus)))

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction: each group of t tied magnitudes removes (t^3 - t)/48
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if var <= 0:
        return 1.0
    delta = w_plus - mean
    z = (delta - 0.5 * np.sign(delta)) / math.sqrt(var)
    return float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))
