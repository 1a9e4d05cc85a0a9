"""Count-regression engine and diagnostics for the notification engagement studies."""

from .design import (
    METRICS,
    NOTIFICATION_TYPES,
    Interaction,
    MetricSource,
    Notification,
    build_design,
    classify_tp_fn,
    parse_daily_aqi,
    parse_interactions,
    parse_notifications,
)
from .diagnostics import (
    GofResult,
    WaldResult,
    added_variable_data,
    coef_multiplier,
    deviance,
    deviance_residuals,
    gof_test,
    pearson_stat,
    pseudo_r2,
    vif,
    vif_flags,
    wald_test,
)
from .model import (
    DEFAULT_ALPHAS,
    DEFAULT_LAMBDAS,
    DesignMatrix,
    Family,
    GlmDivergenceError,
    GlmFit,
    NegativeBinomialGLM,
    fit_null,
    grid_select,
    irls_fit,
    nb_loglik,
    unit_deviance,
)
from .study import analyze_design

__all__ = [
    "DEFAULT_ALPHAS",
    "DEFAULT_LAMBDAS",
    "METRICS",
    "NOTIFICATION_TYPES",
    "DesignMatrix",
    "Family",
    "GlmDivergenceError",
    "GlmFit",
    "GofResult",
    "Interaction",
    "MetricSource",
    "NegativeBinomialGLM",
    "Notification",
    "WaldResult",
    "added_variable_data",
    "analyze_design",
    "build_design",
    "classify_tp_fn",
    "coef_multiplier",
    "deviance",
    "deviance_residuals",
    "fit_null",
    "gof_test",
    "grid_select",
    "irls_fit",
    "nb_loglik",
    "parse_daily_aqi",
    "parse_interactions",
    "parse_notifications",
    "pearson_stat",
    "pseudo_r2",
    "unit_deviance",
    "vif",
    "vif_flags",
    "wald_test",
]
