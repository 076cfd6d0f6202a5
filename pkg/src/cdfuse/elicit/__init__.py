"""Expert-opinion ingestion, pooling and prior fitting."""
from .fit import (
    ShiftedLognormal,
    damped_newton,
    fit_bibeta,
    fit_hier_beta,
    fit_hier_bibeta,
    fit_indep_beta,
    fit_lognormal_prior,
    fit_normal_prior,
    fit_prior,
)
from .priors import Bibeta, HierBeta, HierBibeta, IndepBeta, MomentTargets, PriorSpec
from .survey import (
    DEFAULT_BIN_EDGES,
    PooledHistogram,
    SurveyTable,
    histogram_density,
    histogram_moments,
    load_table1,
    pool_survey,
    survey_from_counts,
)

__all__ = [
    "Bibeta", "DEFAULT_BIN_EDGES", "HierBeta", "HierBibeta", "IndepBeta", "MomentTargets",
    "PooledHistogram", "PriorSpec", "ShiftedLognormal", "SurveyTable", "damped_newton",
    "fit_bibeta", "fit_hier_beta", "fit_hier_bibeta", "fit_indep_beta", "fit_lognormal_prior",
    "fit_normal_prior", "fit_prior", "histogram_density", "histogram_moments", "load_table1",
    "pool_survey", "survey_from_counts",
]
