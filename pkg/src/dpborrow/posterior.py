"""Posterior summaries: treatment effects, decisions, similarity index.

A :class:`PosteriorChain` holds the retained draws of one sampler run. The
functions here reduce chains to the reported quantities: effect summaries
with credible intervals, the posterior-probability decision rule, the
similarity-and-borrowing index (the posterior probability that a historical
study shares the current control's cluster), cluster-count posteriors, and a
moment-matched effective historical sample size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "MissingEstimand",
    "DegenerateVariance",
    "PosteriorChain",
    "EffectSummary",
    "DecisionRule",
    "ClusterCounts",
    "effect_summary",
    "decide",
    "sbi",
    "cluster_count_posterior",
    "ehss_moment_matched",
]


class MissingEstimand(ValueError):
    """Chain does not carry the draws required for the requested summary."""


class DegenerateVariance(ValueError):
    """Posterior variance is zero; a moment-matched size is undefined."""


@dataclass(frozen=True)
class PosteriorChain:
    """Retained post-burn-in draws of one chain, with provenance metadata.

    Binomial chains carry ``pi_cc``/``pi_ct``; IPD chains carry ``gamma`` and
    ``sigma2``. Clustering chains additionally carry the allocation matrix
    ``z`` (iterations x control studies, current control last), the
    concentration draws ``m``, occupied-cluster counts ``k``, and for the
    dependent model the innovation probability ``phi``.
    """

    kind: str
    control_ids: tuple = ()
    cc_index: int = -1
    n_cc: int = 0
    pi_cc: Optional[np.ndarray] = None
    pi_ct: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    sigma2: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    k: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lengths = {
            name: getattr(self, name).shape[0]
            for name in ("pi_cc", "pi_ct", "gamma", "sigma2", "z", "m", "phi", "k")
            if getattr(self, name) is not None
        }
        if not lengths:
            raise ValueError("chain carries no draws")
        if len(set(lengths.values())) != 1:
            raise ValueError(f"draw vectors have unequal lengths: {lengths}")
        if self.pi_cc is not None and not (
            np.all(self.pi_cc > 0) and np.all(self.pi_cc < 1)
        ):
            raise ValueError("pi_cc draws must lie in (0, 1)")
        if self.sigma2 is not None and not np.all(self.sigma2 > 0):
            raise ValueError("sigma2 draws must be positive")

    @property
    def n_draws(self) -> int:
        for name in ("pi_cc", "pi_ct", "gamma", "sigma2", "z", "m", "phi", "k"):
            arr = getattr(self, name)
            if arr is not None:
                return arr.shape[0]
        raise ValueError("chain carries no draws")


@dataclass(frozen=True)
class DecisionRule:
    """Declare success when Pr(effect beyond margin, in direction) > threshold."""

    direction: str = "greater"  # "greater" | "less"
    margin: float = 0.0
    threshold: float = 0.975

    def __post_init__(self):
        if self.direction not in ("greater", "less"):
            raise ValueError(f"direction must be greater/less, got {self.direction!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0,1), got {self.threshold}")


@dataclass(frozen=True)
class EffectSummary:
    mean: float
    sd: float
    ci_lo: float
    ci_hi: float
    tail_prob: float
    rule: DecisionRule
    n_draws: int


DEFAULT_RULES = {
    "binomial_diff": DecisionRule("greater", 0.0, 0.975),
    "ipd_gamma": DecisionRule("less", 0.0, 0.975),
}


def effect_draws(chain: PosteriorChain, estimand: str) -> np.ndarray:
    if estimand == "binomial_diff":
        if chain.pi_cc is None or chain.pi_ct is None:
            raise MissingEstimand("binomial_diff requires pi_cc and pi_ct draws")
        return chain.pi_ct - chain.pi_cc
    if estimand == "ipd_gamma":
        if chain.gamma is None:
            raise MissingEstimand("ipd_gamma requires gamma draws")
        return chain.gamma
    raise MissingEstimand(f"unknown estimand {estimand!r}")


def summarize_draws(draws: np.ndarray, rule: DecisionRule) -> EffectSummary:
    """Effect summary of raw draws: mean, sd, central 95% interval, tail mass."""
    draws = np.asarray(draws, dtype=float)
    lo, hi = np.percentile(draws, [2.5, 97.5])
    if rule.direction == "greater":
        tail = float(np.mean(draws > rule.margin))
    else:
        tail = float(np.mean(draws < rule.margin))
    sd = float(draws.std(ddof=1)) if draws.size > 1 else 0.0
    return EffectSummary(
        mean=float(draws.mean()),
        sd=sd,
        ci_lo=float(lo),
        ci_hi=float(hi),
        tail_prob=tail,
        rule=rule,
        n_draws=draws.size,
    )


def effect_summary(chain: PosteriorChain, estimand: str,
                   rule: Optional[DecisionRule] = None) -> EffectSummary:
    """Summarize the treatment effect carried by a chain.

    ``binomial_diff`` summarizes pi_CT - pi_CC per retained draw; ``ipd_gamma``
    summarizes the treatment coefficient draws.
    """
    if rule is None:
        rule = DEFAULT_RULES[estimand]
    return summarize_draws(effect_draws(chain, estimand), rule)


def decide(summary: EffectSummary, rule: Optional[DecisionRule] = None) -> bool:
    """True iff the directed posterior probability strictly exceeds the threshold."""
    rule = rule if rule is not None else summary.rule
    return summary.tail_prob > rule.threshold


def sbi(chain: PosteriorChain) -> dict:
    """Similarity-and-borrowing index per historical study.

    For each historical study, the fraction of retained iterations in which
    its allocation equals the current control's.
    """
    if chain.z is None:
        raise MissingEstimand("SBI requires allocation draws")
    z = chain.z
    cc = z[:, chain.cc_index]
    out = {}
    for idx, study_id in enumerate(chain.control_ids):
        if idx == chain.cc_index:
            continue
        out[study_id] = float(np.mean(z[:, idx] == cc))
    return out


@dataclass(frozen=True)
class ClusterCounts:
    k_probs: dict
    mean_k: float
    mean_cocluster: float


def cluster_count_posterior(chain: PosteriorChain) -> ClusterCounts:
    """Distribution of the occupied-cluster count and mean co-clustered size.

    ``mean_cocluster`` is the posterior mean number of historical studies
    allocated to the current control's cluster.
    """
    if chain.z is None or chain.k is None:
        raise MissingEstimand("cluster counts require allocation draws")
    counts = np.bincount(chain.k)
    k_probs = {
        int(i): float(c) / chain.k.size for i, c in enumerate(counts) if c > 0
    }
    cc = chain.z[:, chain.cc_index]
    matches = chain.z == cc[:, None]
    # The current control trivially matches itself; subtract it off.
    mean_cocluster = float(matches.sum(axis=1).mean() - 1.0)
    return ClusterCounts(k_probs, float(chain.k.mean()), mean_cocluster)


def ehss_moment_matched(chain: PosteriorChain, n_cc: Optional[int] = None) -> float:
    """Effective historical sample size by single-beta moment matching.

    The posterior of pi_CC is matched to a Beta distribution through its
    mean and variance; the implied information size is m(1-m)/var - 1 and
    the historical excess subtracts the current control's own sample size.
    Exact when the posterior is Beta-shaped; a diagnostic otherwise. May be
    negative and is reported as-is.
    """
    if chain.pi_cc is None:
        raise MissingEstimand("EHSS requires pi_cc draws")
    if n_cc is None:
        n_cc = chain.n_cc
    m = float(chain.pi_cc.mean())
    var = float(chain.pi_cc.var(ddof=1))
    if var <= 0.0:
        raise DegenerateVariance("pi_cc posterior variance is zero")
    ess = m * (1.0 - m) / var - 1.0
    return ess - n_cc
