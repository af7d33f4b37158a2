"""Aggregation and the Wilcoxon signed-rank test.

The exact branch is checked against a brute-force enumeration of every sign
assignment (its own ranking included), and the approximate branch against
scipy's implementation on large samples.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.stats import rankdata, wilcoxon as scipy_wilcoxon

from protoprompt.errors import InvalidArgumentError
from protoprompt.stats import Aggregate, crossval_aggregate, wilcoxon_signed_rank


def enumerate_two_sided_p(diffs):
    """Brute force over all 2^n sign assignments of the ranked magnitudes."""
    diffs = np.asarray([d for d in diffs if d != 0.0])
    n = len(diffs)
    ranks = rankdata(np.abs(diffs))
    observed = ranks[diffs > 0].sum()
    w_values = [
        sum(r for r, s in zip(ranks, signs) if s)
        for signs in itertools.product((False, True), repeat=n)
    ]
    total = len(w_values)
    p_le = sum(w <= observed + 1e-12 for w in w_values) / total
    p_ge = sum(w >= observed - 1e-12 for w in w_values) / total
    return min(1.0, 2.0 * min(p_le, p_ge))


def test_exact_p_matches_enumeration(rng):
    """100 random paired samples, n <= 12, with ties forced into play."""
    for trial in range(100):
        n = int(rng.integers(5, 13))
        x = rng.integers(0, 6, size=n).astype(float)  # small ints -> many ties
        y = rng.integers(0, 6, size=n).astype(float)
        if np.all(x == y):
            continue
        got = wilcoxon_signed_rank(x, y)
        expect = enumerate_two_sided_p(x - y)
        assert abs(got - expect) < 1e-12, f"trial {trial}: {got} != {expect}"


def test_all_positive_six_pairs():
    """Six strictly positive differences: p = 2 * (1/64) = 0.03125."""
    x = np.arange(6, dtype=float) + 1.0
    y = np.zeros(6)
    assert wilcoxon_signed_rank(x, y) == pytest.approx(0.03125, abs=1e-12)


def test_zero_differences_are_dropped():
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
    y = x.copy()
    y[:3] = [0.5, 1.5, 2.5]  # three nonzero diffs of +0.5... rest zero
    got = wilcoxon_signed_rank(x, y)
    expect = enumerate_two_sided_p(x - y)
    assert got == pytest.approx(expect, abs=1e-12)


def test_all_zero_differences_give_p_one():
    x = np.ones(8)
    assert wilcoxon_signed_rank(x, x) == 1.0


def test_short_samples_rejected():
    with pytest.raises(InvalidArgumentError):
        wilcoxon_signed_rank([1, 2, 3, 4], [0, 0, 0, 0])
    with pytest.raises(InvalidArgumentError):
        wilcoxon_signed_rank([1, 2, 3], [0, 0])


def test_large_sample_tracks_scipy(rng):
    """Above the exact cutoff the normal approximation should match scipy's."""
    for _ in range(5):
        n = 40
        x = rng.normal(size=n)
        y = x + rng.normal(0.3, 1.0, size=n)
        ours = wilcoxon_signed_rank(x, y)
        ref = scipy_wilcoxon(x, y, zero_method="wilcox", correction=True, method="approx").pvalue
        assert ours == pytest.approx(float(ref), rel=1e-9)


def test_exact_branch_agrees_with_scipy_exact(rng):
    """For untied data scipy also enumerates; at n <= 25 both must be exact."""
    for _ in range(10):
        n = int(rng.integers(8, 20))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        ours = wilcoxon_signed_rank(x, y)
        ref = scipy_wilcoxon(x, y, zero_method="wilcox", method="exact").pvalue
        assert ours == pytest.approx(float(ref), abs=1e-12)


def test_symmetry_under_swap(rng):
    x = rng.normal(size=15)
    y = rng.normal(size=15)
    assert wilcoxon_signed_rank(x, y) == pytest.approx(wilcoxon_signed_rank(y, x), abs=1e-12)


# --- cross-validation aggregation ----------------------------------------------


def test_aggregate_mean_and_std():
    agg = crossval_aggregate([1.0, 2.0, 3.0, 4.0, 5.0], k=5)
    assert agg.mean == 3.0
    assert agg.std == pytest.approx(math.sqrt(2.5))
    assert agg.complete


def test_aggregate_missing_folds_annotated():
    agg = crossval_aggregate([0.8, 0.9], k=5)
    assert not agg.complete
    assert "3 folds missing" in agg.cell()


def test_aggregate_cell_format():
    agg = Aggregate(mean=0.7783, std=0.0212, folds_present=5, folds_expected=5)
    assert agg.cell(scale=100.0) == "77.83±2.12"
    assert agg.cell(digits=4) == "0.7783±0.0212"


def test_aggregate_single_fold_has_zero_std():
    assert crossval_aggregate([0.5], k=5).std == 0.0


def test_aggregate_validation():
    with pytest.raises(InvalidArgumentError):
        crossval_aggregate([1.0], k=1)
    with pytest.raises(InvalidArgumentError):
        crossval_aggregate([], k=5)
    with pytest.raises(InvalidArgumentError):
        crossval_aggregate([1.0] * 6, k=5)
