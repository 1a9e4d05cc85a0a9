"""Inference and fit diagnostics for fitted count GLMs."""

from __future__ import annotations

import logging
import math
import warnings
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from ..stats import chi2_sf, normal_sf
from .model import DesignMatrix, Family, GlmFit, irls_fit, unit_deviance

log = logging.getLogger(__name__)

Z_975 = 1.959964
GOF_LEVEL = 0.1
VIF_THRESHOLD = 10.0


class WaldResult(NamedTuple):
    z: float
    p_value: float
    ci_low: float
    ci_high: float


class GofResult(NamedTuple):
    p_deviance: float
    p_pearson: float

    def passed(self, level: float = GOF_LEVEL) -> bool:
        return self.p_deviance > level and self.p_pearson > level


def _index(fit: GlmFit, k) -> int:
    if isinstance(k, str):
        if k not in fit.names:
            raise KeyError(f"coefficient {k!r} was pruned or does not exist")
        return fit.names.index(k)
    if not 0 <= k < len(fit.names):
        raise KeyError(f"coefficient index {k} out of range")
    return int(k)


def wald_test(fit: GlmFit, k) -> WaldResult:
    """Z = b/SE(b) with a two-sided normal p-value and a 95% interval.

    ``k`` is a surviving coefficient's name or position (0 is the intercept).
    """
    j = _index(fit, k)
    b = float(fit.coefficients[j])
    se = math.sqrt(max(fit.covariance[j, j], 0.0))
    if se == 0:
        raise ValueError(f"coefficient {fit.names[j]!r} has zero variance")
    z = b / se
    return WaldResult(z, min(1.0, 2 * normal_sf(abs(z))), b - Z_975 * se, b + Z_975 * se)


def deviance(fit: GlmFit) -> float:
    return float(unit_deviance(fit.y, fit.mu, fit.family.alpha).sum())


def pearson_stat(fit: GlmFit) -> float:
    return float(np.sum((fit.y - fit.mu) ** 2 / fit.family.variance(fit.mu)))


def gof_test(fit: GlmFit) -> GofResult:
    """Chi-squared tail probabilities of deviance and Pearson statistics on n - m degrees of freedom."""
    df = fit.n - fit.m
    return GofResult(chi2_sf(deviance(fit), df), chi2_sf(pearson_stat(fit), df))


def pseudo_r2(fit: GlmFit, null_fit: GlmFit) -> float:
    d_null = deviance(null_fit)
    if d_null == 0:
        raise ValueError("degenerate response: null deviance is zero")
    return 1.0 - deviance(fit) / d_null


def deviance_residuals(fit: GlmFit) -> np.ndarray:
    d = unit_deviance(fit.y, fit.mu, fit.family.alpha)
    return np.sign(fit.y - fit.mu) * np.sqrt(d)


def vif(X, names: Sequence[str] | None = None) -> np.ndarray:
    """Variance inflation factor of each column regressed on the rest plus an intercept.

    A column the others reproduce exactly (R^2 within 1e-12 of one) gets ``inf``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("need at least two predictor columns")
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    n, p = X.shape
    out = np.empty(p)
    for k in range(p):
        xk = X[:, k]
        sst = np.sum((xk - xk.mean()) ** 2)
        if sst == 0:
            raise ValueError(f"column {names[k]!r} is constant")
        others = np.column_stack([np.ones(n), np.delete(X, k, axis=1)])
        coef = np.linalg.lstsq(others, xk, rcond=None)[0]
        r2 = 1 - np.sum((xk - others @ coef) ** 2) / sst
        out[k] = math.inf if r2 >= 1 - 1e-12 else 1 / (1 - r2)
    return out


def vif_flags(values, threshold: float = VIF_THRESHOLD) -> np.ndarray:
    return np.asarray(values) > threshold


def coef_multiplier(beta: float) -> float:
    """Multiplicative change of the mean response per unit increase of a predictor."""
    if not math.isfinite(beta):
        raise ValueError("coefficient must be finite")
    return math.exp(beta)


def _bernoulli_deviance_residuals(t: np.ndarray, Z: np.ndarray) -> np.ndarray:
    if np.ptp(t) == 0:
        raise ValueError("treatment column is constant")
    if Z.shape[1]:
        # separable treatments have no finite MLE; the fitted probabilities still saturate
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            model = LogisticRegression(penalty=None, tol=1e-10, max_iter=10000).fit(Z, t)
        for w in caught:
            if issubclass(w.category, ConvergenceWarning):
                log.debug("treatment-on-confounder logistic fit did not converge (separation)")
            else:
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        p = model.predict_proba(Z)[:, 1]
    else:
        p = np.full(len(t), t.mean())
    p = np.clip(p, 1e-15, 1 - 1e-15)
    d = -2 * (t * np.log(p) + (1 - t) * np.log1p(-p))
    return np.sign(t - p) * np.sqrt(np.maximum(d, 0.0))


def added_variable_data(design: DesignMatrix, treatment: str, family: Family = Family(0.0)) -> np.ndarray:
    """Paired (x, y) deviance residuals for an added-variable plot, one row per observation.

    x comes from a logit-link Bernoulli model of the binary treatment on the
    confounders; y from an unpenalized count model of the response on the
    same confounders.
    """
    if treatment not in design.names:
        raise KeyError(f"treatment column {treatment!r} missing")
    t = design.column(treatment)
    if not np.isin(t, (0, 1)).all():
        raise ValueError("treatment column must be binary")
    confounders = [c for c in design.names if c != treatment]
    Z = design.X[:, [design.names.index(c) for c in confounders]]
    x_res = _bernoulli_deviance_residuals(t, Z)
    y_fit = irls_fit(DesignMatrix(design.y, Z, confounders), family)
    return np.column_stack([x_res, deviance_residuals(y_fit)])
