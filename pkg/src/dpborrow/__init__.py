"""Nonparametric Bayesian borrowing of historical control data.

The package clusters historical controls with the current control through a
Dirichlet-process mixture, or a dependent variant whose stick-breaking
weights distinguish historical from current data, and reports treatment
effects, a similarity-and-borrowing index, and frequentist operating
characteristics under repeated simulation.
"""

from .conjugate import (
    BetaPosterior,
    LinearModelPosterior,
    MissingArm,
    RankDeficient,
    cd_binomial,
    linear_regression_gibbs,
    pd_binomial,
)
from .data import (
    Dataset,
    IpdColumns,
    SchemaError,
    Study,
    StudyRole,
    ValidationError,
    control_subset,
    parse_ipd_dataset,
    parse_summary_dataset,
)
from .ddpm import DdpmConfig, run_ddpm
from .dpm import DpmConfig, EmptySlice, run_dpm
from .posterior import (
    DecisionRule,
    EffectSummary,
    PosteriorChain,
    cluster_count_posterior,
    decide,
    effect_summary,
    ehss_moment_matched,
    sbi,
)
from .rng import InvalidParameter, RngStream, draw, log_density
from .simulate import (
    BinomialScenario,
    IpdScenario,
    MetricsTable,
    generate_binomial_replicate,
    generate_ipd_replicate,
    run_operating_characteristics,
)

__version__ = "0.1.0"
