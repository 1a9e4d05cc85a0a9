"""Negative-binomial / Poisson GLM with log link, fitted by elastic-net penalized IRLS."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

log = logging.getLogger(__name__)

POISSON_CUTOFF = 1e-12
PRUNE_TOL = 1e-5
DEFAULT_LAMBDAS = (0.01, 0.1, 1.0)
DEFAULT_ALPHAS = (0.0, 0.1, 0.2, 0.4, 0.8, 1.0, 2.0, 4.0, 8.0)
INTERCEPT = "(intercept)"
_ETA_CLIP = 50.0
_STABLE_COUNT_MAX = 1_000_000


class GlmDivergenceError(RuntimeError):
    def __init__(self, message: str, trace: Sequence[float]):
        super().__init__(f"{message}; objective trace: {[round(t, 10) for t in trace]}")
        self.trace = list(trace)


@dataclass(frozen=True)
class Family:
    """Negative binomial with shape ``alpha``; ``alpha = 0`` is Poisson. Dispersion is fixed at one."""

    alpha: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be a finite non-negative number, got {self.alpha}")

    @property
    def is_poisson(self) -> bool:
        return self.alpha < POISSON_CUTOFF

    @property
    def name(self) -> str:
        return "poisson" if self.is_poisson else f"negative_binomial(alpha={self.alpha:g})"

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu if self.is_poisson else mu + self.alpha * mu**2

    def working_weights(self, mu):
        """Fisher weights for the log link: (dmu/deta)^2 / V(mu)."""
        mu = np.asarray(mu, dtype=float)
        return mu if self.is_poisson else mu / (1 + self.alpha * mu)


def _check_counts(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("response must be one-dimensional")
    if np.any(y < 0) or np.any(y != np.round(y)) or not np.all(np.isfinite(y)):
        raise ValueError("response must hold non-negative integers")
    return y


def nb_loglik(y, mu, alpha: float) -> float:
    """Log-likelihood of counts ``y`` under mean ``mu`` and shape ``alpha`` (Poisson below 1e-12)."""
    y = _check_counts(y)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ValueError("y and mu differ in length")
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise ValueError("mu must be positive and finite")
    if alpha < POISSON_CUTOFF:
        return float(np.sum(y * np.log(mu) - mu - gammaln(y + 1)))
    r = 1.0 / alpha
    top = int(y.max()) if len(y) else 0
    if top <= _STABLE_COUNT_MAX:
        # ln G(y + r) - ln G(r) + y ln(alpha mu) = sum_{k<y} ln(1 + alpha k) + y ln mu, which
        # avoids cancelling two huge gammaln terms when alpha is tiny
        head = np.concatenate([[0.0], np.cumsum(np.log1p(alpha * np.arange(top)))])
        ratio = head[y.astype(np.int64)] + y * np.log(mu)
    else:
        ratio = gammaln(y + r) - gammaln(r) + y * np.log(alpha * mu)
    return float(np.sum(ratio - gammaln(y + 1) - (y + r) * np.log1p(alpha * mu)))


def unit_deviance(y, mu, alpha: float) -> np.ndarray:
    """Per-observation deviance contributions, using 0 ln 0 = 0 for zero counts."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ylog = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
    if alpha < POISSON_CUTOFF:
        d = 2 * (ylog - (y - mu))
    else:
        r = 1.0 / alpha
        d = 2 * (ylog - (y + r) * (np.log1p(alpha * y) - np.log1p(alpha * mu)))
    return np.maximum(d, 0.0)


@dataclass
class DesignMatrix:
    """Count response with named predictor columns; the treatment, if any, must be binary."""

    y: np.ndarray
    X: np.ndarray
    names: list[str]
    treatment: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = _check_counts(self.y)
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), -1)
        self.names = list(self.names)
        if self.X.shape[1] != len(self.names):
            raise ValueError("column names do not match the design width")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate predictor names")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("design matrix has non-finite entries")
        if self.treatment is not None:
            if self.treatment not in self.names:
                raise ValueError(f"treatment column {self.treatment!r} missing")
            if not np.isin(self.column(self.treatment), (0, 1)).all():
                raise ValueError("treatment column must be binary")

    def __len__(self):
        return len(self.y)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> "DesignMatrix":
        idx = [self.names.index(n) for n in names]
        treatment = self.treatment if self.treatment in names else None
        return DesignMatrix(self.y, self.X[:, idx], list(names), treatment, dict(self.meta))

    def drop_constant(self) -> tuple["DesignMatrix", list[str]]:
        """Remove columns with a single distinct value; the treatment column is never removed."""
        keep, dropped = [], []
        for j, name in enumerate(self.names):
            if name != self.treatment and np.ptp(self.X[:, j]) == 0:
                dropped.append(name)
            else:
                keep.append(name)
        if dropped:
            log.info("dropping constant design columns: %s", ", ".join(dropped))
        return self.select(keep), dropped

    def drop_collinear(self, tol: float = 1e-8) -> tuple["DesignMatrix", list[str]]:
        """Remove columns that are exact linear combinations of earlier ones plus the intercept.

        Columns are visited with the treatment first, then in design order; a
        column is dropped when its centered residual after projecting on the
        kept columns has relative norm below ``tol``.
        """
        order = sorted(range(len(self.names)), key=lambda j: self.names[j] != self.treatment)
        basis = np.empty((len(self), 0))
        keep, dropped = set(), []
        for j in order:
            v = self.X[:, j] - self.X[:, j].mean()
            norm = np.linalg.norm(v)
            if basis.shape[1]:
                v = v - basis @ (basis.T @ v)
                v = v - basis @ (basis.T @ v)
            if norm == 0 or np.linalg.norm(v) <= tol * norm:
                if self.names[j] == self.treatment:
                    raise ValueError("treatment column is constant")
                dropped.append(self.names[j])
            else:
                keep.add(j)
                basis = np.column_stack([basis, v / np.linalg.norm(v)])
        if dropped:
            log.info("dropping collinear design columns: %s", ", ".join(dropped))
        return self.select([n for j, n in enumerate(self.names) if j in keep]), dropped


@dataclass
class GlmFit:
    """Fitted model after pruning and the unpenalized refit on surviving predictors."""

    coefficients: np.ndarray
    names: list[str]
    covariance: np.ndarray
    log_likelihood: float
    deviance: float
    pearson: float
    aic: float
    null_deviance: float
    n: int
    m: int
    family: Family
    lam: float
    mix: float
    converged: bool
    iterations: int
    y: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    X: np.ndarray = field(repr=False)
    penalized_coefficients: dict = field(default_factory=dict)
    dropped: list[str] = field(default_factory=list)
    trace: list[float] = field(default_factory=list, repr=False)
    selection: list[dict] = field(default_factory=list, repr=False)

    @property
    def pseudo_r2(self) -> float:
        if self.null_deviance <= 0:
            raise ValueError("degenerate response: null deviance is zero")
        return 1.0 - self.deviance / self.null_deviance

    @property
    def alpha(self) -> float:
        return self.family.alpha

    def has(self, name: str) -> bool:
        return name in self.names

    def coef(self, name: str) -> float:
        if name not in self.names:
            raise KeyError(f"{name!r} was pruned or is not a predictor")
        return float(self.coefficients[self.names.index(name)])

    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def linear_predictor(self, X: np.ndarray, names: Sequence[str]) -> np.ndarray:
        """Linear predictor for new rows given by columns ``names`` (must cover the survivors)."""
        X = np.asarray(X, dtype=float)
        eta = np.full(len(X), self.coefficients[0])
        for k, name in enumerate(self.names[1:], start=1):
            eta += self.coefficients[k] * X[:, list(names).index(name)]
        return eta

    def to_dict(self) -> dict:
        se = self.std_errors()
        d = {
            "family": self.family.name,
            "alpha": self.family.alpha,
            "lambda": self.lam,
            "mix": self.mix,
            "coefficients": {n: float(b) for n, b in zip(self.names, self.coefficients)},
            "std_errors": {n: float(s) for n, s in zip(self.names, se)},
            "log_likelihood": self.log_likelihood,
            "deviance": self.deviance,
            "pearson": self.pearson,
            "aic": self.aic,
            "n": self.n,
            "m": self.m,
            "converged": self.converged,
            "iterations": self.iterations,
            "dropped": list(self.dropped),
        }
        d["pseudo_r2"] = self.pseudo_r2 if self.null_deviance > 0 else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _objective(y, eta, beta, alpha, lam, mix) -> float:
    mu = np.exp(np.clip(eta, -_ETA_CLIP, _ETA_CLIP))
    pen = 0.0
    if lam > 0 and len(beta) > 1:
        b = beta[1:]
        pen = lam * (mix * np.abs(b).sum() + 0.5 * (1 - mix) * (b @ b))
    return -nb_loglik(y, mu, alpha) / len(y) + pen


def _soft(x: float, t: float) -> float:
    return math.copysign(max(abs(x) - t, 0.0), x)


def _penalized_wls(A, b, beta0, lam, mix, tol=1e-12, max_sweeps=5000):
    """Cyclic coordinate descent on 0.5 beta'A beta - b'beta + penalty, column 0 unpenalized.

    ``A`` is the weighted Gram matrix X'WX/n and ``b`` is X'Wz/n. The
    gradient ``b - A beta`` is updated in place after each coordinate move.
    Sweeps alternate between the active set and full passes until a full
    pass changes nothing beyond ``tol``.
    """
    p = len(b)
    beta = [float(v) for v in beta0]
    rows = A.tolist()
    diag = [rows[j][j] for j in range(p)]
    grad = list(b - A @ np.asarray(beta))
    l1, l2 = lam * mix, lam * (1 - mix)

    def sweep(coords):
        biggest = 0.0
        for j in coords:
            ajj = diag[j]
            if ajj <= 0:
                continue
            old = beta[j]
            r = grad[j] + ajj * old
            new = r / ajj if j == 0 else _soft(r, l1) / (ajj + l2)
            d = new - old
            if d != 0.0:
                beta[j] = new
                row = rows[j]
                for k in range(p):
                    grad[k] -= row[k] * d
                if abs(d) > biggest:
                    biggest = abs(d)
        return biggest

    everything = range(p)
    for _ in range(max_sweeps):
        scale = tol * (1 + max(abs(v) for v in beta))
        if sweep(everything) < scale:
            break
        active = [j for j in everything if j == 0 or beta[j] != 0.0]
        for _ in range(max_sweeps):
            if sweep(active) < scale:
                break
    return np.array(beta)


def _unstandardize(gamma: np.ndarray, center: np.ndarray, scale: np.ndarray) -> np.ndarray:
    beta = np.empty_like(gamma)
    beta[1:] = gamma[1:] / scale
    beta[0] = gamma[0] - beta[1:] @ center
    return beta


def _irls(X1, y, family: Family, lam: float, mix: float, tol: float, max_iter: int, beta0=None):
    """Outer IRLS loop with step halving. ``X1`` includes the leading intercept column."""
    n, p = X1.shape
    alpha = family.alpha
    if beta0 is None:
        beta = np.zeros(p)
        beta[0] = math.log(y.mean())
    else:
        beta = beta0.copy()
    eta = X1 @ beta
    obj = _objective(y, eta, beta, alpha, lam, mix)
    trace = [obj]
    increases = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.exp(np.clip(eta, -_ETA_CLIP, _ETA_CLIP))
        W = family.working_weights(mu)
        z = eta + (y - mu) / mu
        A = (X1 * W[:, None]).T @ X1 / n
        c = X1.T @ (W * z) / n
        if lam == 0:
            cand = np.linalg.lstsq(A, c, rcond=None)[0]
        else:
            cand = _penalized_wls(A, c, beta, lam, mix)
        new_obj = _objective(y, X1 @ cand, cand, alpha, lam, mix)
        slack = 1e-10 * max(1.0, abs(obj))
        step = 1.0
        trial = cand
        while new_obj > obj + slack and step > 1e-6:
            step /= 2
            trial = beta + step * (cand - beta)
            new_obj = _objective(y, X1 @ trial, trial, alpha, lam, mix)
        cand = trial
        if new_obj > obj + slack:
            if new_obj - obj <= tol * max(1.0, abs(obj)):
                converged = True
                break
            increases += 1
            if increases >= 5:
                raise GlmDivergenceError("objective increased for 5 consecutive iterations", trace + [new_obj])
        else:
            increases = 0
        delta = np.abs(cand - beta).max()
        rel = abs(obj - new_obj) / max(abs(new_obj), 1e-300)
        beta, obj = cand, new_obj
        eta = X1 @ beta
        trace.append(obj)
        # The coefficient guard keeps reported estimates accurate when the objective flattens early.
        if rel < tol and delta < 1e-8 * (1 + np.abs(beta).max()):
            converged = True
            break
    return beta, converged, it, trace


def irls_fit(
    design: DesignMatrix,
    family: Family,
    lam: float = 0.0,
    mix: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 100,
    prune_tol: float = PRUNE_TOL,
) -> GlmFit:
    """Minimise -loglik/n + lam * (mix * |b|_1 + (1 - mix)/2 * |b|_2^2) over non-intercept b.

    After convergence, predictors with ``|b| < prune_tol`` are removed and the
    survivors refitted without penalty. Coefficients, covariance (inverse
    Fisher information), likelihood and AIC all refer to that refit.
    """
    if lam < 0 or not 0 <= mix <= 1:
        raise ValueError("lam must be non-negative and mix within [0, 1]")
    y, X = design.y, design.X
    n, k = X.shape
    if n <= k + 1:
        raise ValueError(f"need more observations than parameters: n={n}, m={k + 1}")
    if y.sum() == 0:
        raise ValueError("degenerate response: all counts are zero")
    # Penalized solves run on standardized columns (the usual elastic-net
    # convention); coefficients are mapped back to the original scale.
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    if np.any(scale == 0):
        raise ValueError(f"constant predictor column {design.names[int(np.argmin(scale))]!r}")
    Z1 = np.column_stack([np.ones(n), (X - center) / scale])
    gamma, converged, iters, trace = _irls(Z1, y, family, lam, mix, tol, max_iter)
    beta = _unstandardize(gamma, center, scale)
    penalized = {name: float(b) for name, b in zip([INTERCEPT] + design.names, beta)}
    keep = [0] + [j + 1 for j in range(k) if abs(beta[j + 1]) >= prune_tol]
    dropped = [design.names[j] for j in range(k) if abs(beta[j + 1]) < prune_tol]
    cols = [j - 1 for j in keep[1:]]
    if lam > 0 or dropped:
        gamma, refit_conv, refit_iters, refit_trace = _irls(
            Z1[:, keep], y, family, 0.0, mix, tol, max_iter, gamma[keep]
        )
        converged = converged and refit_conv
        iters += refit_iters
        trace = trace + refit_trace
        beta = _unstandardize(gamma, center[cols], scale[cols])
    Xs = np.column_stack([np.ones(n), X[:, cols]])
    eta = Xs @ beta
    mu = np.exp(np.clip(eta, -_ETA_CLIP, _ETA_CLIP))
    W = family.working_weights(mu)
    info = (Xs * W[:, None]).T @ Xs
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        log.warning("singular Fisher information; using the pseudo-inverse")
        cov = np.linalg.pinv(info, hermitian=True)
    ll = nb_loglik(y, mu, family.alpha)
    m = len(keep)
    null_mu = np.full(n, y.mean())
    return GlmFit(
        coefficients=beta,
        names=[INTERCEPT] + [design.names[j - 1] for j in keep[1:]],
        covariance=cov,
        log_likelihood=ll,
        deviance=float(unit_deviance(y, mu, family.alpha).sum()),
        pearson=float(np.sum((y - mu) ** 2 / family.variance(mu))),
        aic=2 * m - 2 * ll,
        null_deviance=float(unit_deviance(y, null_mu, family.alpha).sum()),
        n=n,
        m=m,
        family=family,
        lam=float(lam),
        mix=float(mix),
        converged=converged,
        iterations=iters,
        y=y,
        mu=mu,
        X=Xs,
        penalized_coefficients=penalized,
        dropped=dropped,
        trace=trace,
    )


def fit_null(y, family: Family) -> GlmFit:
    """Intercept-only fit."""
    y = _check_counts(y)
    return irls_fit(DesignMatrix(y, np.empty((len(y), 0)), []), family)


def grid_select(
    design: DesignMatrix,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    mix: float = 0.5,
    n_jobs: int = 1,
    **fit_params,
) -> GlmFit:
    """Fit every (lambda, alpha) pair and keep the lowest AIC.

    Ties go to the smaller lambda, then the smaller alpha. Pairs whose fit
    diverges are skipped; if all diverge the error is raised.
    """
    grid = [(float(lam), float(a)) for lam in sorted(lambdas) for a in sorted(alphas)]
    if not grid:
        raise ValueError("empty hyperparameter grid")

    def run(pair):
        lam, a = pair
        try:
            return irls_fit(design, Family(a), lam, mix, **fit_params)
        except (GlmDivergenceError, np.linalg.LinAlgError) as exc:
            log.info("fit lambda=%g alpha=%g failed: %s", lam, a, exc)
            return exc

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, grid))
    else:
        results = [run(pair) for pair in grid]
    best = None
    table = []
    for (lam, a), res in zip(grid, results):
        if isinstance(res, Exception):
            table.append({"lambda": lam, "alpha": a, "aic": None, "error": str(res)})
            continue
        table.append({"lambda": lam, "alpha": a, "aic": res.aic, "m": res.m})
        if best is None or res.aic < best.aic:
            best = res
    if best is None:
        raise GlmDivergenceError("all grid fits diverged", [])
    best.selection = table
    return best


class NegativeBinomialGLM(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`irls_fit` for a fixed (lam, alpha) pair.

    Parameters
    ----------
    alpha : float
        Negative-binomial shape; 0 gives a Poisson model.
    lam : float
        Elastic-net strength on non-intercept coefficients.
    mix : float
        L1 share of the penalty.
    """

    def __init__(self, alpha=0.0, lam=0.0, mix=0.5, tol=1e-8, max_iter=100, prune_tol=PRUNE_TOL):
        self.alpha = alpha
        self.lam = lam
        self.mix = mix
        self.tol = tol
        self.max_iter = max_iter
        self.prune_tol = prune_tol

    def fit(self, X, y, feature_names=None):
        X = check_array(X, dtype=float)
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
        design = DesignMatrix(np.asarray(y), X, names)
        self.fit_ = irls_fit(design, Family(self.alpha), self.lam, self.mix, self.tol, self.max_iter, self.prune_tol)
        self.feature_names_in_ = np.array(names, dtype=object)
        self.n_features_in_ = X.shape[1]
        self.intercept_ = float(self.fit_.coefficients[0])
        coef = np.zeros(X.shape[1])
        for name, b in zip(self.fit_.names[1:], self.fit_.coefficients[1:]):
            coef[names.index(name)] = b
        self.coef_ = coef
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X, dtype=float)
        return np.exp(self.intercept_ + X @ self.coef_)
