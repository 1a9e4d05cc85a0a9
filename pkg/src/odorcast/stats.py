"""Rank tests, effect sizes and distribution tails."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import special
from scipy.stats import rankdata

EXACT_WILCOXON_MAX_N = 25
EXACT_MWU_MAX_PAIRS = 400


@dataclass(frozen=True)
class TestResult:
    """Outcome of a two-sided rank test.

    ``n`` is the number of nonzero differences for the signed-rank test and
    ``n1``/``n2`` are the group sizes for the rank-sum test.
    """

    __test__ = False  # keep pytest from collecting this class

    method: str
    statistic: float
    p_value: float
    effect_size: float
    z: float | None = None
    n: int | None = None
    n1: int | None = None
    n2: int | None = None
    exact: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def normal_sf(z: float) -> float:
    """Upper tail of the standard normal distribution."""
    return float(special.ndtr(-z))


def chi2_sf(x: float, df: float) -> float:
    """Upper tail of the chi-squared distribution with ``df`` degrees of freedom."""
    if not df >= 1:
        raise ValueError(f"invalid degrees of freedom {df}")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if df == 2:
        return math.exp(-x / 2)
    return float(special.gammaincc(df / 2, x / 2))


def _check_vector(x, name: str, min_len: int = 1) -> np.ndarray:
    a = np.asarray(x, dtype=float).ravel()
    if len(a) < min_len:
        raise ValueError(f"{name} needs at least {min_len} values")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def pearson_r(x, y) -> float:
    x = _check_vector(x, "x", 2)
    y = _check_vector(y, "y", 2)
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(dx @ dx), math.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise ValueError("constant input")
    return float(np.clip(dx @ dy / (sx * sy), -1.0, 1.0))


def spearman_rho(x, y) -> float:
    """Pearson correlation of midranks."""
    x = _check_vector(x, "x", 2)
    y = _check_vector(y, "y", 2)
    return pearson_r(rankdata(x), rankdata(y))


def cliffs_delta(a, b) -> float:
    """(#{a > b} - #{a < b}) / (n1 n2); tied pairs count toward neither side."""
    a = _check_vector(a, "a")
    b = _check_vector(b, "b")
    diff = a[:, None] - b[None, :]
    return float((np.count_nonzero(diff > 0) - np.count_nonzero(diff < 0)) / diff.size)


def _tie_term(ranks_or_values: np.ndarray) -> float:
    _, counts = np.unique(ranks_or_values, return_counts=True)
    return float(np.sum(counts.astype(float) ** 3 - counts))


def _signed_rank_cdf(n: int) -> np.ndarray:
    """Counts of sign assignments per rank sum for ranks 1..n (length n(n+1)/2 + 1)."""
    total = n * (n + 1) // 2
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for k in range(1, n + 1):
        counts[k:] = counts[k:] + counts[: total + 1 - k].copy()
    return counts


def wilcoxon_signed_rank(pairs: Sequence[tuple[float, float]]) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired observations.

    Zero differences are dropped. With at most 25 nonzero differences and no
    tied magnitudes the p-value is exact; otherwise it uses the normal
    approximation with tie-corrected variance and a 0.5 continuity correction.
    The effect size is Spearman's rho between the group indicator
    (before = 0, after = 1) and the pooled observations.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
        raise ValueError("pairs must be a nonempty list of (before, after)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("pairs contain non-finite values")
    d = arr[:, 1] - arr[:, 0]
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("degenerate sample: all differences are zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    t = min(w_plus, w_minus)
    ties = _tie_term(ranks)
    mean = n * (n + 1) / 4
    var = n * (n + 1) * (2 * n + 1) / 24 - ties / 48
    z = -max(abs(t - mean) - 0.5, 0.0) / math.sqrt(var) if var > 0 else 0.0
    exact = n <= EXACT_WILCOXON_MAX_N and ties == 0
    if exact:
        counts = _signed_rank_cdf(n)
        p = min(1.0, 2 * float(sum(counts[: int(t) + 1])) / 2**n)
    else:
        p = min(1.0, 2 * normal_sf(-z))
    groups = np.r_[np.zeros(len(arr)), np.ones(len(arr))]
    values = np.r_[arr[:, 0], arr[:, 1]]
    effect = spearman_rho(groups, values) if np.ptp(values) > 0 else 0.0
    return TestResult("wilcoxon_signed_rank", t, p, effect, z=z, n=n, exact=exact)


def _rank_sum_counts(n1: int, n2: int) -> np.ndarray:
    """Number of arrangements giving each U in 0..n1*n2 (no ties)."""
    # The largest pooled value is either from a (beats all j values of b) or from b.
    prev = [np.ones(1, dtype=object) for _ in range(n2 + 1)]
    for i in range(1, n1 + 1):
        cur = [np.ones(1, dtype=object)]
        for j in range(1, n2 + 1):
            a = prev[j]
            b = cur[j - 1]
            out = np.zeros(i * j + 1, dtype=object)
            out[j : j + len(a)] += a
            out[: len(b)] += b
            cur.append(out)
        prev = cur
    return prev[n2]


def mann_whitney_u(a, b) -> TestResult:
    """Two-sided Mann-Whitney U test with U = #{a > b} + 0.5 #{a == b}.

    Exact when ``len(a) * len(b) <= 400`` and there are no ties; otherwise the
    normal approximation with tie-corrected variance and 0.5 continuity
    correction. The effect size is Cliff's delta of ``a`` against ``b``.
    """
    a = _check_vector(a, "a")
    b = _check_vector(b, "b")
    n1, n2 = len(a), len(b)
    diff = a[:, None] - b[None, :]
    u = float(np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0))
    pooled = np.r_[a, b]
    ties = _tie_term(pooled)
    mean = n1 * n2 / 2
    n = n1 + n2
    var = n1 * n2 / 12 * ((n + 1) - ties / (n * (n - 1))) if n > 1 else 0.0
    z = -max(abs(u - mean) - 0.5, 0.0) / math.sqrt(var) if var > 0 else 0.0
    exact = n1 * n2 <= EXACT_MWU_MAX_PAIRS and ties == 0
    if exact:
        counts = _rank_sum_counts(n1, n2)
        lo = min(u, n1 * n2 - u)
        p = min(1.0, 2 * float(sum(counts[: int(lo) + 1])) / math.comb(n, n1))
    else:
        p = min(1.0, 2 * normal_sf(-z))
    return TestResult("mann_whitney_u", u, p, cliffs_delta(a, b), z=z, n1=n1, n2=n2, exact=exact)
