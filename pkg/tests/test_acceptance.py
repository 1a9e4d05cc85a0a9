"""Acceptance criteria 1-12, one test each; every test logs a PASS/FAIL/SKIP line."""

import itertools
import json
import math
import os
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, optimize, special
from scipy.stats import kstest, nbinom, poisson

from conftest import record
from odorcast.cli import main
from odorcast.evaluate import event_prf, timeseries_cv
from odorcast.features import ImputeStandardizer
from odorcast.glm import (
    DesignMatrix,
    Family,
    deviance,
    deviance_residuals,
    fit_null,
    grid_select,
    irls_fit,
    pseudo_r2,
    wald_test,
)
from odorcast.interpret import dbscan
from odorcast.stats import chi2_sf, cliffs_delta, mann_whitney_u, normal_sf, wilcoxon_signed_rank
from odorcast.synthetic import PLANTED_INTERACTION, synthetic_engagement_design, write_workspace
from odorcast.trees import DecisionTreeClassifier


# --- 1 ---------------------------------------------------------------------


def run_masks(bits):
    """Bitmask of each maximal run of ones."""
    masks, cur = [], 0
    for i, b in enumerate(bits):
        if b:
            cur |= 1 << i
        elif cur:
            masks.append(cur)
            cur = 0
    if cur:
        masks.append(cur)
    return masks


def test_criterion_01_event_metric_oracle():
    start = time.perf_counter()
    mismatches = pairs = 0
    for n in range(0, 9):
        vectors = [tuple(v) for v in itertools.product((0, 1), repeat=n)]
        runs = {v: run_masks(v) for v in vectors}
        for pred in vectors:
            P = runs[pred]
            for truth in vectors:
                T = runs[truth]
                tp = sum(any(p & t for t in T) for p in P)
                fn = sum(not any(p & t for p in P) for t in T)
                got = event_prf(pred, truth)
                pairs += 1
                if (got.tp, got.fp, got.fn) != (tp, len(P) - tp, fn):
                    mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 10
    record(1, ok, f"{pairs} pairs, {mismatches} mismatches, {elapsed:.1f}s (limit 10s)")
    assert ok


# --- 2 ---------------------------------------------------------------------


def exact_gini(labels):
    n = len(labels)
    if n == 0:
        return Fraction(0)
    return 1 - sum(Fraction(labels.count(c), n) ** 2 for c in set(labels))


def exact_gain(col, y, thr):
    left = [c for v, c in zip(col, y) if v <= thr]
    right = [c for v, c in zip(col, y) if v > thr]
    n = len(y)
    return exact_gini(y) - Fraction(len(left), n) * exact_gini(left) - Fraction(len(right), n) * exact_gini(right)


def test_criterion_02_cart_root_optimality():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    failures = 0
    for _ in range(200):
        n, p = int(rng.integers(2, 41)), int(rng.integers(1, 5))
        X = rng.integers(0, 8, size=(n, p)).astype(float)
        if rng.random() < 0.5:
            X += rng.normal(size=(n, p)).round(2)
        y = rng.integers(0, int(rng.integers(2, 4)), n)
        yl = y.tolist()
        best = Fraction(0)
        for j in range(p):
            col = [Fraction(v) for v in X[:, j].tolist()]
            vals = sorted(set(col))
            for a, b in zip(vals, vals[1:]):
                best = max(best, exact_gain(col, yl, (a + b) / 2))
        tree = DecisionTreeClassifier(max_features=None).fit(X, y).tree_
        if tree.feature[0] < 0:
            chosen = Fraction(0)
        else:
            col = [Fraction(v) for v in X[:, tree.feature[0]].tolist()]
            chosen = exact_gain(col, yl, Fraction(tree.threshold[0]))
        failures += chosen != best
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 30
    record(2, ok, f"200 datasets, {failures} suboptimal roots, {elapsed:.1f}s (limit 30s)")
    assert ok


# --- 3 ---------------------------------------------------------------------


def closure_dbscan(D, eps, min_pts):
    """Clusters as connected components of the core eps-graph; borders join the lowest adjacent cluster."""
    n = len(D)
    adj = D <= eps
    core = adj.sum(axis=1) >= min_pts
    comp = [-1] * n
    reach = adj & core[None, :] & core[:, None]
    # transitive closure by Floyd-Warshall on core points
    R = reach.copy()
    for k in range(n):
        R |= R[:, [k]] & R[[k], :]
    cores = [i for i in range(n) if core[i]]
    next_id = 0
    for i in cores:
        if comp[i] == -1:
            for j in cores:
                if R[i, j] or i == j:
                    comp[j] = next_id
            next_id += 1
    labels = np.array(comp)
    for i in range(n):
        if not core[i]:
            ids = [comp[j] for j in cores if adj[i, j]]
            labels[i] = min(ids) if ids else -1
    return labels


def test_criterion_03_dbscan_oracle():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    failures = 0
    for _ in range(500):
        n = int(rng.integers(1, 13))
        pts = rng.uniform(0, 4, size=(n, 2))
        D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        eps = float(rng.uniform(0.3, 1.5))
        min_pts = int(rng.integers(1, 5))
        got = dbscan(D, eps, min_pts).labels
        want = closure_dbscan(D, eps, min_pts)
        failures += not np.array_equal(got, want)
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 10
    record(3, ok, f"500 point sets, {failures} mismatched partitions, {elapsed:.1f}s (limit 10s)")
    assert ok


# --- 4 ---------------------------------------------------------------------


def test_criterion_04_glm_closed_forms():
    rng = np.random.default_rng(4)
    checks = {}
    y = rng.poisson(3.0, 200)
    null = fit_null(y, Family(0))
    checks["intercept = ln(mean)"] = abs(null.coefficients[0] - math.log(y.mean())) < 1e-8
    X = rng.normal(size=(200, 2))
    fit = irls_fit(DesignMatrix(y, X, ["a", "b"]), Family(0.3))
    r = deviance_residuals(fit)
    checks["sum r^2 = D"] = abs((r**2).sum() - deviance(fit)) < 1e-6
    ypos = rng.poisson(5.0, 100) + 1
    sat_base = fit_null(ypos, Family(0))
    sat = replace(sat_base, mu=ypos.astype(float))
    checks["saturated D = 0"] = deviance(sat) == 0
    checks["R2(null) = 0"] = pseudo_r2(null, null) == 0
    checks["R2(saturated) = 1"] = pseudo_r2(sat, sat_base) == 1
    ok = all(checks.values())
    record(4, ok, ", ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert ok


# --- 5 ---------------------------------------------------------------------


def reference_negloglik(beta, x, y, alpha):
    mu = np.exp(beta[0] + beta[1] * x)
    if alpha == 0:
        return -poisson.logpmf(y, mu).sum()
    return -nbinom.logpmf(y, 1 / alpha, 1 / (1 + alpha * mu)).sum()


def test_criterion_05_glm_optimizer_oracle():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        alpha = 0.0 if seed % 2 == 0 else 0.5
        x = rng.normal(size=150)
        mu = np.exp(0.7 + 0.5 * x)
        y = rng.poisson(mu) if alpha == 0 else rng.negative_binomial(2, 1 / (1 + 0.5 * mu))
        fit = irls_fit(DesignMatrix(y, x[:, None], ["x"]), Family(alpha))
        ref = optimize.minimize(
            reference_negloglik,
            x0=[0.0, 0.0],
            args=(x, y, alpha),
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000, "maxfev": 40000},
        )
        worst = max(worst, float(np.max(np.abs(fit.coefficients - ref.x))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    record(5, ok, f"20 fixtures (Poisson and NB alpha=0.5), max |diff| {worst:.2e} (limit 1e-4), {elapsed:.1f}s")
    assert ok


# --- 6 ---------------------------------------------------------------------


def test_criterion_06_planted_effect_and_null():
    design = synthetic_engagement_design(n=2000, beta=1.16, alpha=0.4, seed=0)
    fit = grid_select(design)
    beta = fit.coef("treatment")
    p = wald_test(fit, "treatment").p_value
    null_p = [
        wald_test(irls_fit(synthetic_engagement_design(n=2000, beta=0.0, alpha=0.4, seed=1000 + s), Family(0.4)), "treatment").p_value
        for s in range(200)
    ]
    ks = kstest(null_p, "uniform").pvalue
    ok = abs(beta - 1.16) <= 0.15 and p < 1e-3 and ks > 0.01
    record(6, ok, f"beta {beta:.4f} (target 1.16 +/- 0.15), Wald p {p:.1e}, null KS p {ks:.3f} over 200 replicates")
    assert ok


# --- 7 ---------------------------------------------------------------------


def chi2_tail_by_quadrature(x, df):
    k = df / 2

    def pdf(t):
        return math.exp((k - 1) * math.log(t) - t / 2 - k * math.log(2) - special.gammaln(k))

    val, _ = integrate.quad(pdf, x, np.inf, epsabs=1e-14, epsrel=1e-13, limit=500)
    return val


def test_criterion_07_tail_functions():
    z_err = abs(normal_sf(1.959964) - 0.025)
    grid = np.linspace(0, 60, 241)
    df2_exact = all(chi2_sf(float(x), 2) == math.exp(-float(x) / 2) for x in grid)
    worst = 0.0
    for df in (1, 5, 10, 100):
        for x in (0.05, 0.5, 1.0, df / 2, float(df), 1.5 * df, 2.0 * df + 5):
            worst = max(worst, abs(chi2_sf(x, df) - chi2_tail_by_quadrature(x, df)))
    ok = z_err <= 1e-6 and df2_exact and worst < 1e-8
    record(7, ok, f"|normal_sf - 0.025| {z_err:.1e}, df=2 exact: {df2_exact}, max quadrature gap {worst:.1e}")
    assert ok


# --- 8 ---------------------------------------------------------------------


def enumerated_wilcoxon_p(d):
    ranks = np.argsort(np.argsort(np.abs(d))) + 1
    w_plus = int(ranks[d > 0].sum())
    total = int(ranks.sum())
    t = min(w_plus, total - w_plus)
    n = len(d)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        wp = sum(int(r) for r, s in zip(ranks, signs) if s)
        hits += min(wp, total - wp) <= t
    return Fraction(hits, 2**n)


def test_criterion_08_rank_tests():
    rng = np.random.default_rng(8)
    wilcoxon_bad = 0
    fixtures = 0
    for n in range(1, 11):
        for _ in range(12):
            mags = rng.permutation(np.arange(1, n + 1)) + rng.uniform(0, 0.5, n)
            d = mags * rng.choice([-1, 1], n)
            res = wilcoxon_signed_rank([(0.0, float(v)) for v in d])
            fixtures += 1
            wilcoxon_bad += not (res.exact and res.p_value == float(enumerated_wilcoxon_p(d)))
    u_bad = delta_bad = 0
    for _ in range(300):
        a = rng.integers(0, 6, int(rng.integers(1, 20))).astype(float)
        b = rng.integers(0, 6, int(rng.integers(1, 20))).astype(float)
        if rng.random() < 0.5:
            a, b = a + rng.normal(size=len(a)), b + rng.normal(size=len(b))
        ab, ba = mann_whitney_u(a, b), mann_whitney_u(b, a)
        u_bad += ab.statistic + ba.statistic != len(a) * len(b)
        delta_bad += abs(cliffs_delta(a, b) - (2 * ab.statistic / (len(a) * len(b)) - 1)) > 1e-12
    ok = wilcoxon_bad == 0 and u_bad == 0 and delta_bad == 0
    record(8, ok, f"Wilcoxon exact vs enumeration: {wilcoxon_bad}/{fixtures} off; U sum: {u_bad}/300 off; delta identity: {delta_bad}/300 off")
    assert ok


# --- 9 ---------------------------------------------------------------------


def test_criterion_09_anti_leakage(city_dataset):
    X, labels = city_dataset
    violations = 0
    folds = 0
    for algorithm, repeats in (("et", 2), ("rf", 1)):
        rep = timeseries_cv(X, labels, "classification", algorithm, {"n_estimators": 5}, 168, 4, repeats, master_seed=9)
        for f in rep.folds:
            folds += 1
            lo, hi = f["train_hours"]
            if not hi < f["test_hours"][0]:
                violations += 1
            rows = (X.hours >= lo) & (X.hours <= hi)
            scaler = ImputeStandardizer().fit(X.values[rows])
            if float(np.sum(scaler.mean_) + np.sum(scaler.scale_)) != f["stats_fingerprint"]:
                violations += 1
    ok = violations == 0 and folds > 0
    record(9, ok, f"{folds} folds checked, {violations} violations")
    assert ok


# --- 10 and 11 -------------------------------------------------------------


@pytest.fixture(scope="module")
def city_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    return root, write_workspace(root, weeks=10, days=30, seed=0)


def test_criterion_10_planted_pipeline(city_workspace):
    root, config = city_workspace
    start = time.perf_counter()
    codes = [
        main(["predict", "--config", str(config), "--out", str(root / "jobs1"), "--jobs", "1", "--quiet"]),
        main(["interpret", "--config", str(config), "--out", str(root / "jobs1"), "--jobs", "1", "--quiet"]),
    ]
    elapsed = time.perf_counter() - start
    cv = json.loads((root / "jobs1" / "cv_classification_et.json").read_text())
    f_score = cv["summary"]["f_score"]["mean"]
    root_feature = json.loads((root / "jobs1" / "interpretation.json").read_text())["root_feature"]
    ok = codes == [0, 0] and f_score > 0.85 and root_feature == PLANTED_INTERACTION and elapsed < 300
    record(10, ok, f"F {f_score:.3f} (limit > 0.85), root {root_feature}, {elapsed:.1f}s (limit 300s)")
    assert ok


def output_bytes(directory: Path) -> dict[str, bytes]:
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_criterion_11_determinism(city_workspace):
    root, config = city_workspace
    outputs = {}
    for jobs in (1, 2, 8):
        out = root / f"det{jobs}"
        for command in ("predict", "interpret"):
            assert main([command, "--config", str(config), "--out", str(out), "--jobs", str(jobs), "--quiet"]) == 0
        outputs[jobs] = output_bytes(out)
    same = outputs[1] == outputs[2] == outputs[8]
    ok = same and len(outputs[1]) >= 5
    record(11, ok, f"{len(outputs[1])} output files byte-identical across 1, 2, 8 threads: {same}")
    assert ok


# --- 12 --------------------------------------------------------------------

REAL_DATA_ENV = "ODORCAST_REAL_DATA_CONFIG"
REFERENCE = {"precision": 0.87, "recall": 0.59, "f_score": 0.70}


def test_criterion_12_optional_real_data(tmp_path):
    cfg_path = os.environ.get(REAL_DATA_ENV)
    if not cfg_path:
        record(12, None, f"optional; set {REAL_DATA_ENV} to a config for a locally downloaded dataset")
        pytest.skip("no local real dataset configured")
    code = main(["predict", "--config", cfg_path, "--out", str(tmp_path), "--quiet"])
    path = tmp_path / "cv_classification_et.json"
    if code != 0 or not path.is_file():
        record(12, False, f"predict exited {code} or produced no classification/et report (reported only)")
        return
    summary = json.loads(path.read_text())["summary"]
    gaps = {m: summary[m]["mean"] - ref for m, ref in REFERENCE.items()}
    ok = all(abs(g) <= 0.05 for g in gaps.values())
    record(12, ok, "reported only; " + ", ".join(f"{m} {summary[m]['mean']:.3f} (ref {REFERENCE[m]})" for m in REFERENCE))
