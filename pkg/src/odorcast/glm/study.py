"""Rank tests plus base/full regression blocks for one notification sub-study."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..stats import mann_whitney_u, wilcoxon_signed_rank
from .design import TREATMENT, grouped_responses, paired_responses
from .diagnostics import added_variable_data, gof_test, wald_test
from .model import DEFAULT_ALPHAS, DEFAULT_LAMBDAS, DesignMatrix, GlmFit, grid_select, irls_fit

SIGNIFICANCE = 0.05
STRONG = 0.6
WEAK = 0.4


def median_siqr(values) -> tuple[float, float]:
    """Median and semi-interquartile range."""
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(med), float((q3 - q1) / 2)


def rank_block(design: DesignMatrix) -> dict:
    """Wilcoxon on before/after pairs, or Mann-Whitney of FN against TP.

    For the TP/FN study U is reported for the FN sample against the TP
    sample, and Cliff's delta as TP against FN, so a positive delta means the
    treated group is larger.
    """
    study = design.meta.get("study")
    if study == "before_after":
        pairs = paired_responses(design)
        res = wilcoxon_signed_rank(pairs)
        before = [p[0] for p in pairs]
        after = [p[1] for p in pairs]
        return {
            "test": res.method,
            "n": len(pairs),
            "untreated": median_siqr(before),
            "treated": median_siqr(after),
            "statistic": res.statistic,
            "z": res.z,
            "p_value": res.p_value,
            "effect_size": res.effect_size,
            "exact": res.exact,
        }
    fn, tp = grouped_responses(design)
    res = mann_whitney_u(fn, tp)
    return {
        "test": res.method,
        "n_untreated": len(fn),
        "n_treated": len(tp),
        "untreated": median_siqr(fn),
        "treated": median_siqr(tp),
        "statistic": res.statistic,
        "z": res.z,
        "p_value": res.p_value,
        "effect_size": -res.effect_size,
        "exact": res.exact,
    }


def model_block(fit: GlmFit, label: str) -> dict:
    out = {
        "model": label,
        "family": fit.family.name,
        "alpha": fit.family.alpha,
        "lambda": fit.lam,
        "deviance": fit.deviance,
        "pearson": fit.pearson,
        "pseudo_r2": fit.pseudo_r2 if fit.null_deviance > 0 else None,
        "aic": fit.aic,
        "gof_passed": gof_test(fit).passed(),
    }
    if fit.has(TREATMENT):
        w = wald_test(fit, TREATMENT)
        out.update(coef=fit.coef(TREATMENT), z=w.z, p_value=w.p_value, ci=[w.ci_low, w.ci_high])
    else:
        out.update(coef=None, z=None, p_value=None, ci=None)
    return out


def confounder_marks(fit: GlmFit, confounders: Sequence[str]) -> dict[str, str]:
    """'sig' when the Wald p < .05, 'ns' when not, '' when the predictor was not selected."""
    marks = {}
    for name in confounders:
        if fit.has(name):
            marks[name] = "sig" if wald_test(fit, name).p_value < SIGNIFICANCE else "ns"
        else:
            marks[name] = ""
    return marks


def effect_mark(rank_p: float, full: dict) -> dict:
    """Summarise agreement between the rank test and the full regression model.

    Strength is 'strong' when pseudo R^2 and the treatment coefficient both
    exceed .6 and 'weak' when both fall below .4.
    """
    significant = rank_p < SIGNIFICANCE
    reg_sig = full["p_value"] is not None and full["p_value"] < SIGNIFICANCE
    strength = None
    r2, beta = full["pseudo_r2"], full["coef"]
    if reg_sig and r2 is not None and beta is not None:
        if r2 > STRONG and beta > STRONG:
            strength = "strong"
        elif r2 < WEAK and beta < WEAK:
            strength = "weak"
    return {"significant": significant, "consistent": significant == reg_sig, "strength": strength}


def analyze_design(
    design: DesignMatrix,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    mix: float = 0.5,
    n_jobs: int = 1,
) -> tuple[dict, np.ndarray]:
    """Rank test, base model (intercept and treatment) and AIC-selected full model.

    The base model reuses the full model's selected shape and is unpenalized.
    Returns the report block and the added-variable residual pairs.
    """
    rank = rank_block(design)
    reduced, dropped = design.drop_constant()
    reduced, collinear = reduced.drop_collinear()
    dropped = dropped + collinear
    full = grid_select(reduced, lambdas, alphas, mix, n_jobs)
    base = irls_fit(reduced.select([TREATMENT]), full.family, 0.0, mix)
    full_block = model_block(full, "full")
    confounders = [n for n in design.names if n != TREATMENT]
    av = added_variable_data(reduced, TREATMENT, full.family)
    block = {
        "metric": design.meta.get("metric"),
        "study": design.meta.get("study"),
        "treatment_type": design.meta.get("treatment_type"),
        "bin_offset_hours": design.meta.get("bin_offset_hours", 0),
        "n": len(design),
        "rank_test": rank,
        "base": model_block(base, "base"),
        "full": full_block,
        "dropped_columns": dropped,
        "pruned": full.dropped,
        "confounders": confounder_marks(full, confounders),
        "summary": effect_mark(rank["p_value"], full_block),
        "coef_multiplier": math.exp(full_block["coef"]) if full_block["coef"] is not None else None,
    }
    return block, av
