import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from odorcast.stats import (
    _rank_sum_counts,
    _signed_rank_cdf,
    chi2_sf,
    cliffs_delta,
    mann_whitney_u,
    normal_sf,
    pearson_r,
    spearman_rho,
    wilcoxon_signed_rank,
)


def test_wilcoxon_small_example():
    res = wilcoxon_signed_rank([(1, 2), (2, 4), (3, 7)])
    assert res.statistic == 0 and res.p_value == 0.25 and res.exact and res.n == 3


def test_wilcoxon_mirrored_differences():
    res = wilcoxon_signed_rank([(0, 1), (0, -2), (0, -3), (0, 4)])
    assert res.statistic == 4 * 5 / 4 and res.p_value == 1.0


def test_wilcoxon_degenerate():
    with pytest.raises(ValueError, match="all differences are zero"):
        wilcoxon_signed_rank([(1, 1), (2, 2)])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([])


def test_signed_rank_counts_enumerated():
    for n in range(1, 9):
        counts = _signed_rank_cdf(n)
        brute = np.zeros(len(counts), dtype=int)
        for signs in itertools.product((0, 1), repeat=n):
            brute[sum(k + 1 for k, s in enumerate(signs) if s)] += 1
        assert list(counts) == list(brute)


def test_rank_sum_counts_enumerated():
    for n1, n2 in [(1, 1), (2, 3), (3, 3), (4, 2)]:
        counts = _rank_sum_counts(n1, n2)
        brute = np.zeros(n1 * n2 + 1, dtype=int)
        for pos in itertools.combinations(range(n1 + n2), n1):
            a = np.array(pos)
            b = np.setdiff1d(np.arange(n1 + n2), a)
            brute[int((a[:, None] > b[None, :]).sum())] += 1
        assert list(counts) == list(brute)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 25))
def test_wilcoxon_exact_matches_scipy(seed, n):
    rng = np.random.default_rng(seed)
    before = rng.normal(size=n)
    after = before + rng.normal(0.3, 1, size=n)
    res = wilcoxon_signed_rank(list(zip(before, after)))
    ref = sps.wilcoxon(after, before, method="exact")
    assert res.exact
    assert abs(res.p_value - ref.pvalue) < 1e-12


def test_wilcoxon_approx_matches_scipy_with_ties():
    rng = np.random.default_rng(1)
    before = rng.integers(0, 10, 40).astype(float)
    after = before + rng.integers(-3, 5, 40)
    res = wilcoxon_signed_rank(list(zip(before, after)))
    ref = sps.wilcoxon(after, before, method="approx", correction=True, zero_method="wilcox")
    assert not res.exact
    assert abs(res.p_value - ref.pvalue) < 1e-10


def worst_normal_gap(n):
    """Largest |exact - normal| two-sided p over every attainable tie-free T."""
    counts = _signed_rank_cdf(n)
    mean, sd = n * (n + 1) / 4, math.sqrt(n * (n + 1) * (2 * n + 1) / 24)
    cum, worst = 0, 0.0
    for t in range(int(mean) + 1):
        cum += counts[t]
        z = -max(abs(t - mean) - 0.5, 0.0) / sd
        worst = max(worst, abs(min(1.0, 2 * cum / 2**n) - min(1.0, 2 * normal_sf(-z))))
    return worst


def test_exact_and_normal_close_at_moderate_n():
    for n in range(17, 26):
        assert worst_normal_gap(n) < 0.01
    # the continuity-corrected approximation overshoots 0.01 mid-range below n = 17
    assert worst_normal_gap(15) == pytest.approx(0.0110536, abs=1e-6)
    assert worst_normal_gap(16) == pytest.approx(0.0103562, abs=1e-6)
    rng = np.random.default_rng(2)
    for n in range(15, 26):
        res = wilcoxon_signed_rank([(0, v) for v in rng.normal(0.2, 1, n)])
        assert abs(res.p_value - min(1.0, 2 * normal_sf(-res.z))) <= worst_normal_gap(n) + 1e-15


def test_mwu_examples():
    res = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert res.statistic == 0 and res.exact and res.p_value == pytest.approx(0.1)
    assert res.effect_size == -1
    tied = mann_whitney_u([1, 2], [2, 3])
    assert tied.statistic == 0.5 and not tied.exact


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 20), st.integers(1, 20))
def test_mwu_matches_scipy(seed, n1, n2):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n1), rng.normal(0.5, 1, size=n2)
    res = mann_whitney_u(a, b)
    method = "exact" if res.exact else "asymptotic"
    ref = sps.mannwhitneyu(a, b, alternative="two-sided", method=method, use_continuity=True)
    assert res.statistic == ref.statistic
    assert abs(res.p_value - ref.pvalue) < 1e-10


def test_mwu_approx_with_ties_matches_scipy():
    rng = np.random.default_rng(3)
    a, b = rng.integers(0, 6, 30), rng.integers(1, 7, 25)
    res = mann_whitney_u(a, b)
    ref = sps.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert abs(res.p_value - ref.pvalue) < 1e-10


@given(st.lists(st.integers(0, 9), min_size=1, max_size=15), st.lists(st.integers(0, 9), min_size=1, max_size=15))
def test_u_identities(a, b):
    res_ab, res_ba = mann_whitney_u(a, b), mann_whitney_u(b, a)
    n1, n2 = len(a), len(b)
    assert res_ab.statistic + res_ba.statistic == n1 * n2
    assert abs(res_ab.effect_size - (2 * res_ab.statistic / (n1 * n2) - 1)) < 1e-12
    assert abs(cliffs_delta(a, b) + cliffs_delta(b, a)) < 1e-12
    assert res_ab.p_value == pytest.approx(res_ba.p_value, abs=1e-12)


def test_tails():
    assert normal_sf(1.959963984540054) == pytest.approx(0.025, abs=1e-12)
    assert normal_sf(40) < 1e-300
    assert chi2_sf(3.0, 2) == math.exp(-1.5)
    assert chi2_sf(0, 5) == 1.0
    for df in (1, 5, 10, 100):
        assert abs(chi2_sf(df * 1.3, df) - sps.chi2.sf(df * 1.3, df)) < 1e-12
    with pytest.raises(ValueError):
        chi2_sf(1.0, 0)
    with pytest.raises(ValueError):
        chi2_sf(-1.0, 3)


@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=30))
def test_correlation_ranges_and_monotone_invariance(x):
    x = np.array(x, dtype=float)
    if np.ptp(x) == 0:
        return
    y = x**3 + 2 * x
    assert spearman_rho(x, y) == pytest.approx(1.0, abs=1e-12)
    assert -1 <= pearson_r(x, -x) <= -1 + 1e-12


def test_correlation_errors():
    with pytest.raises(ValueError, match="constant"):
        pearson_r([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError, match="length"):
        pearson_r([1, 2], [1, 2, 3])
    with pytest.raises(ValueError, match="non-finite"):
        cliffs_delta([np.nan], [1])
