"""Closed-form comparator analyses: current-data-only and pooled-data.

These serve two purposes: they are the CD/PD baselines reported alongside
the clustering models, and their exact conjugacy makes them oracles for
sampler tests. Binomial effects are simulated by direct independent draws
from the two Beta posteriors (no MCMC); the IPD variants run a standard
two-block Gibbs sampler for the normal linear model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset
from .rng import RngStream, cholesky_with_jitter

__all__ = [
    "MissingArm",
    "RankDeficient",
    "BetaPosterior",
    "LinearModelPosterior",
    "cd_posteriors",
    "pd_posteriors",
    "cd_binomial",
    "pd_binomial",
    "linear_regression_gibbs",
]

DEFAULT_BINOMIAL_DRAWS = 100_000
DEFAULT_GIBBS_ITERS = 22_000
DEFAULT_GIBBS_BURN_IN = 2_000


class MissingArm(ValueError):
    """Dataset lacks the current-treatment arm required for an effect."""


class RankDeficient(ValueError):
    """Design matrix is rank deficient; the regression is unidentified."""


@dataclass(frozen=True)
class BetaPosterior:
    """Beta(alpha, beta) used both as prior and as conjugate posterior."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"Beta parameters must be positive, got {self}")

    def updated(self, successes: float, failures: float) -> "BetaPosterior":
        return BetaPosterior(self.alpha + successes, self.beta + failures)

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1.0))

    def sample(self, rng: RngStream, size: Optional[int] = None):
        return rng.beta(self.alpha, self.beta, size=size)


@dataclass(frozen=True)
class LinearModelPosterior:
    """Retained Gibbs draws for the normal linear model.

    ``coef`` is (draws, p); the treatment coefficient, when the design has
    one, is the last column (``trt_index``).
    """

    coef: np.ndarray
    sigma2: np.ndarray
    names: tuple
    trt_index: int

    @property
    def treatment_draws(self) -> np.ndarray:
        return self.coef[:, self.trt_index]


DEFAULT_BETA_PRIOR = BetaPosterior(0.5, 0.5)


def _require_arms(dataset: Dataset):
    if dataset.outcome_kind != "binomial":
        raise ValueError("binomial comparators need a binomial-summary dataset")
    ct = dataset.current_treatment
    if ct is None:
        raise MissingArm("dataset has no current_treatment study")
    return dataset.current_control, ct


def cd_posteriors(dataset: Dataset, prior: BetaPosterior = DEFAULT_BETA_PRIOR):
    """Current-data-only conjugate posteriors (control, treatment)."""
    cc, ct = _require_arms(dataset)
    post_cc = prior.updated(cc.payload.responses, cc.payload.n - cc.payload.responses)
    post_ct = prior.updated(ct.payload.responses, ct.payload.n - ct.payload.responses)
    return post_cc, post_ct


def pd_posteriors(dataset: Dataset, prior: BetaPosterior = DEFAULT_BETA_PRIOR):
    """Pooled-data posteriors: all controls merged, treatment as in CD."""
    cc, ct = _require_arms(dataset)
    pooled_y = cc.payload.responses + sum(s.payload.responses for s in dataset.historical)
    pooled_n = cc.payload.n + sum(s.payload.n for s in dataset.historical)
    post_pool = prior.updated(pooled_y, pooled_n - pooled_y)
    post_ct = prior.updated(ct.payload.responses, ct.payload.n - ct.payload.responses)
    return post_pool, post_ct


def _effect_draws(post_cc: BetaPosterior, post_ct: BetaPosterior,
                  n_draws: int, rng: RngStream) -> np.ndarray:
    pi_ct = post_ct.sample(rng, size=n_draws)
    pi_cc = post_cc.sample(rng, size=n_draws)
    return pi_ct - pi_cc


def cd_binomial(dataset: Dataset, prior: BetaPosterior = DEFAULT_BETA_PRIOR,
                n_draws: int = DEFAULT_BINOMIAL_DRAWS, rng: Optional[RngStream] = None):
    """Treatment-effect draws (pi_CT - pi_CC) using current-trial data only."""
    rng = rng if rng is not None else RngStream(0)
    post_cc, post_ct = cd_posteriors(dataset, prior)
    return _effect_draws(post_cc, post_ct, n_draws, rng)


def pd_binomial(dataset: Dataset, prior: BetaPosterior = DEFAULT_BETA_PRIOR,
                n_draws: int = DEFAULT_BINOMIAL_DRAWS, rng: Optional[RngStream] = None):
    """Treatment-effect draws pooling historical and current controls."""
    rng = rng if rng is not None else RngStream(0)
    post_pool, post_ct = pd_posteriors(dataset, prior)
    return _effect_draws(post_pool, post_ct, n_draws, rng)


def _stack_design(dataset: Dataset, pooling: str):
    if dataset.outcome_kind != "ipd":
        raise ValueError("linear_regression_gibbs needs an IPD dataset")
    ct = dataset.current_treatment
    if ct is None:
        raise MissingArm("dataset has no current_treatment study")
    if pooling == "current_only":
        studies = [dataset.current_control, ct]
    elif pooling == "pooled":
        studies = list(dataset.historical) + [dataset.current_control, ct]
    else:
        raise ValueError(f"pooling must be current_only or pooled, got {pooling!r}")
    x = np.vstack([s.payload.covariates for s in studies])
    t = np.concatenate([s.payload.treatment for s in studies])
    y = np.concatenate([s.payload.outcome for s in studies])
    design = np.column_stack([x, t])
    names = dataset.meta.get("covariate_names")
    if names is None:
        names = [f"x{i}" for i in range(1, x.shape[1])]
    return design, y, ("intercept", *names, "trt")


def linear_regression_gibbs(
    dataset: Dataset,
    pooling: str = "current_only",
    coef_prior_sd: float = 1000.0,
    sigma2_prior=(0.01, 0.01),
    iters: int = DEFAULT_GIBBS_ITERS,
    burn_in: int = DEFAULT_GIBBS_BURN_IN,
    rng: Optional[RngStream] = None,
    fix_sigma2: Optional[float] = None,
) -> LinearModelPosterior:
    """Two-block Gibbs for y = X beta + eps with diffuse conjugate priors.

    beta | sigma2 is multivariate normal, sigma2 | beta inverse gamma.
    ``current_only`` fits the current trial (both arms, treatment coefficient
    included); ``pooled`` adds every historical control with common
    coefficients. ``fix_sigma2`` holds the error variance constant, which
    reduces the chain to exact draws from the closed-form normal posterior.
    """
    rng = rng if rng is not None else RngStream(0)
    design, y, names = _stack_design(dataset, pooling)
    n, p = design.shape
    if np.linalg.matrix_rank(design.T @ design) < p:
        raise RankDeficient(f"design has rank < {p}")

    xtx = design.T @ design
    xty = design.T @ y
    yty = float(y @ y)
    prior_prec = np.full(p, coef_prior_sd**-2)
    a0, b0 = sigma2_prior

    sigma2 = fix_sigma2 if fix_sigma2 is not None else max(float(np.var(y)), 1e-8)
    n_keep = iters - burn_in
    if n_keep <= 0:
        raise ValueError("iters must exceed burn_in")
    coef_out = np.empty((n_keep, p))
    sigma2_out = np.empty(n_keep)

    beta = np.zeros(p)
    for it in range(iters):
        prec = xtx / sigma2 + np.diag(prior_prec)
        chol = cholesky_with_jitter(prec)
        mean = np.linalg.solve(prec, xty / sigma2)
        beta = mean + np.linalg.solve(chol.T, rng.standard_normal(p))
        if fix_sigma2 is None:
            ssr = yty - 2.0 * beta @ xty + beta @ xtx @ beta
            sigma2 = (b0 + 0.5 * ssr) / rng.gamma(a0 + 0.5 * n, 1.0)
        if it >= burn_in:
            coef_out[it - burn_in] = beta
            sigma2_out[it - burn_in] = sigma2
    return LinearModelPosterior(coef_out, sigma2_out, names, p - 1)
