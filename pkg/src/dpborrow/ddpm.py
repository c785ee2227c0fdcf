"""Dependent DP mixture: shared atoms, arm-type-specific stick weights.

Historical studies draw allocations from one stick-breaking measure and the
current control from another. The two share every atom; only the stick
variables differ, tied component-wise by a Markov structure: the current
control's stick is a fresh Beta(1, M) draw with probability phi and a copy
of the historical one otherwise. phi = 0 collapses the model to the plain
DP mixture; phi = 1 gives independent weight processes over shared atoms.
Marginally each measure remains a DP, so clustering behavior within each arm
type is unchanged; the tie merely prioritizes agreement between historical
and current controls.

An explicit innovation indicator b_c per component is carried as a latent
variable (never inferred from floating-point equality); its full conditional
and phi's are then closed-form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import betaln, ndtr

from .conjugate import BetaPosterior
from .data import Dataset
from .dpm import (
    ClusterState,
    ComponentCapExceeded,
    ConfigError,
    DpmConfig,
    EmptySlice,
    _clip_stick,
    _ct_posterior,
    _draw_base_atoms,
    _loglik_table,
    step_nuisance_ipd,
    step_theta,
    stick_weights,
)
from .kernels import BinomialKernel, LinearKernel, make_kernel
from .manifest import config_digest
from .posterior import PosteriorChain
from .rng import Beta as BetaDist
from .rng import RngStream, TruncatedNormal

__all__ = [
    "DdpmConfig",
    "DdpmState",
    "run_ddpm",
    "step_v_dependent",
    "step_u_dependent",
    "step_z_dependent",
    "step_phi",
    "step_m_dependent",
    "truncate_to_bound",
]


@dataclass(frozen=True)
class DdpmConfig(DpmConfig):
    """DP-mixture settings plus the dependence block.

    ``phi_update`` selects the exact conjugate indicator draw (default) or a
    truncated-normal Metropolis-Hastings step retained as a cross-check;
    both target the same conditional. ``fix_phi`` pins the dependence
    parameter for degenerate-case diagnostics.
    """

    phi_prior: BetaPosterior = BetaPosterior(2.0, 2.0)
    phi_update: str = "conjugate_indicator"  # or "metropolis_hastings"
    mh_proposal_sd: float = 0.1
    fix_phi: Optional[float] = None

    def __post_init__(self):
        super().__post_init__()
        if self.phi_update not in ("conjugate_indicator", "metropolis_hastings"):
            raise ConfigError(f"unknown phi_update {self.phi_update!r}")
        if self.mh_proposal_sd <= 0:
            raise ConfigError("mh_proposal_sd must be positive")
        if self.fix_phi is not None and not 0.0 <= self.fix_phi <= 1.0:
            raise ConfigError("fix_phi must lie in [0, 1]")


@dataclass
class DdpmState(ClusterState):
    """Cluster state with per-arm-type sticks and tie indicators.

    ``b[c] = 1`` means the current-control stick at component c was drawn
    fresh; ``b[c] = 0`` means it is (exactly) the historical one.
    """

    v_h: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_cc: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    w_h: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w_cc: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phi: float = 0.5


def _group_counts(state: DdpmState, cc_index: int, length: int):
    z_h = state.z[:cc_index]
    z_cc = int(state.z[cc_index])
    n_h = np.bincount(z_h, minlength=length).astype(float)
    m_h = z_h.size - np.cumsum(n_h)
    n_cc = np.zeros(length)
    n_cc[z_cc] = 1.0
    m_cc = (np.arange(length) < z_cc).astype(float)
    return n_h, m_h, n_cc, m_cc


def step_v_dependent(state: DdpmState, cc_index: int, rng: RngStream) -> DdpmState:
    """Jointly refresh (v_h, v_cc, b) per component from the tie-augmented
    full conditional given the allocations.

    The tied branch (b=0) draws one shared stick from the Beta conditional
    with both groups' counts; the fresh branch (b=1) draws the two sticks
    independently from their group conditionals. Branch probabilities are
    (1 - phi) and phi times the corresponding Beta-function normalizers.
    """
    length = int(state.z.max()) + 1
    n_h, m_h, n_cc, m_cc = _group_counts(state, cc_index, length)
    m = state.m

    shared_a, shared_b = 1.0 + n_h + n_cc, m + m_h + m_cc
    ha, hb = 1.0 + n_h, m + m_h
    ca, cb = 1.0 + n_cc, m + m_cc

    phi = state.phi
    if phi <= 0.0:
        fresh = np.zeros(length, dtype=bool)
    elif phi >= 1.0:
        fresh = np.ones(length, dtype=bool)
    else:
        log_tied = math.log1p(-phi) + betaln(shared_a, shared_b) - betaln(1.0, m)
        log_fresh = math.log(phi) + betaln(ha, hb) + betaln(ca, cb) - 2.0 * betaln(1.0, m)
        p_fresh = 1.0 / (1.0 + np.exp(np.clip(log_tied - log_fresh, -700.0, 700.0)))
        fresh = rng.uniform(size=length) < p_fresh

    shared = _clip_stick(rng.beta(shared_a, shared_b))
    vh_fresh = _clip_stick(rng.beta(ha, hb))
    vcc_fresh = _clip_stick(rng.beta(ca, cb))
    state.b = fresh
    state.v_h = np.where(fresh, vh_fresh, shared)
    state.v_cc = np.where(fresh, vcc_fresh, shared)
    state.w_h = stick_weights(state.v_h)
    state.w_cc = stick_weights(state.v_cc)
    state.atoms = state.atoms[:length]
    return state


def step_u_dependent(state: DdpmState, kernel, config: DdpmConfig,
                     rng: RngStream) -> DdpmState:
    """Group-specific slices, then extend both stick lists to cover them.

    Tail components follow the prior tie structure: a historical Beta(1, M)
    stick, an innovation flag from Bernoulli(phi), and a current-control
    stick that is fresh or copied accordingly. Both lists stay the same
    length; the slice bound is the larger of the two groups' bounds.
    """
    cc = kernel.cc_index
    wz = np.empty(state.n_units)
    wz[:cc] = state.w_h[state.z[:cc]]
    wz[cc] = state.w_cc[state.z[cc]]
    state.u = wz * rng.uniform(size=state.n_units)

    target_h = min(1.0 - float(state.u[:cc].min()), 1.0 - 1e-12) if cc > 0 else 0.0
    target_cc = min(1.0 - float(state.u[cc]), 1.0 - 1e-12)

    total_h = float(state.w_h.sum())
    total_cc = float(state.w_cc.sum())
    if total_h <= target_h or total_cc <= target_cc:
        tail_h = float(np.prod(1.0 - state.v_h))
        tail_cc = float(np.prod(1.0 - state.v_cc))
        new_vh, new_vcc, new_b = [], [], []
        while total_h <= target_h or total_cc <= target_cc:
            if state.v_h.size + len(new_vh) >= config.max_components:
                raise ComponentCapExceeded(
                    f"stick lists exceeded {config.max_components} components"
                )
            vh = float(_clip_stick(rng.beta(1.0, state.m)))
            if state.phi > 0.0 and rng.uniform() < state.phi:
                vcc = float(_clip_stick(rng.beta(1.0, state.m)))
                new_b.append(True)
            else:
                vcc = vh
                new_b.append(False)
            new_vh.append(vh)
            new_vcc.append(vcc)
            total_h += vh * tail_h
            total_cc += vcc * tail_cc
            tail_h *= 1.0 - vh
            tail_cc *= 1.0 - vcc
        state.v_h = np.concatenate([state.v_h, new_vh])
        state.v_cc = np.concatenate([state.v_cc, new_vcc])
        state.b = np.concatenate([state.b, new_b])
        state.w_h = stick_weights(state.v_h)
        state.w_cc = stick_weights(state.v_cc)
        state.atoms = np.concatenate(
            [state.atoms, _draw_base_atoms(kernel, config, len(new_vh), rng)]
        )

    cs_h = int(np.searchsorted(np.cumsum(state.w_h), target_h, side="right")) + 1
    cs_cc = int(np.searchsorted(np.cumsum(state.w_cc), target_cc, side="right")) + 1
    state.c_star = min(max(cs_h, cs_cc), state.w_h.size)
    return state


def step_z_dependent(state: DdpmState, kernel, config: DdpmConfig,
                     rng: RngStream) -> DdpmState:
    """Allocations against the group-specific weights and shared atoms."""
    cs = state.c_star
    cc = kernel.cc_index
    loglik = _loglik_table(state, kernel, config, cs)
    admissible = np.empty((cs, state.n_units), dtype=bool)
    admissible[:, :cc] = state.w_h[:cs, None] > state.u[None, :cc]
    admissible[:, cc] = state.w_cc[:cs] > state.u[cc]
    if not np.all(admissible.any(axis=0)):
        raise EmptySlice("a study has no admissible component")
    loglik = np.where(admissible, loglik, -np.inf)
    gumbel = rng.gumbel(size=loglik.shape)
    state.z = np.argmax(loglik + gumbel, axis=0)
    return state


def truncate_to_bound(state: DdpmState) -> DdpmState:
    """Drop components beyond the slice bound.

    They are exchangeable prior draws that nothing retained refers to, so
    removing them is plain marginalization; afterwards the innovation-count
    and concentration conditionals over the kept components are exact.
    """
    cs = state.c_star
    state.v_h = state.v_h[:cs]
    state.v_cc = state.v_cc[:cs]
    state.b = state.b[:cs]
    state.w_h = state.w_h[:cs]
    state.w_cc = state.w_cc[:cs]
    state.atoms = state.atoms[:cs]
    return state


def step_m_dependent(state: DdpmState, config: DdpmConfig, rng: RngStream) -> DdpmState:
    """Concentration update from the instantiated sticks.

    Exact conditional for this model: every historical stick and every fresh
    current-control stick is a Beta(1, M) observation, so M | sticks is
    Gamma(a + count, 1/scale - sum log(1 - v)). The "escobar_west" switch
    instead applies the partition-based update to the pooled allocation
    vector; the dependent model's partition law is not the
    Chinese-restaurant process, so that variant is biased (it suppresses
    co-clustering) and exists only for comparison runs.
    """
    if config.fix_m is not None:
        return state
    a, scale = config.m_prior.shape, config.m_prior.scale
    if config.m_update == "escobar_west":
        k = state.occupied_count()
        n = state.n_units
        eta = rng.beta(state.m + 1.0, n)
        rate = 1.0 / scale - math.log(eta)
        odds = (a + k - 1.0) / (n * rate)
        shape = a + k if rng.uniform() < odds / (1.0 + odds) else a + k - 1.0
        state.m = float(rng.gamma(shape, 1.0 / rate))
        return state
    v_h = np.clip(state.v_h, None, 1.0 - 1e-14)
    v_fresh = np.clip(state.v_cc[state.b], None, 1.0 - 1e-14)
    rate = 1.0 / scale - float(np.log1p(-v_h).sum()) - float(np.log1p(-v_fresh).sum())
    count = v_h.size + v_fresh.size
    state.m = float(rng.gamma(a + count, 1.0 / rate))
    return state


def _truncnorm_mass(center: float, sd: float) -> float:
    return float(ndtr((1.0 - center) / sd) - ndtr((0.0 - center) / sd))


def step_phi(state: DdpmState, config: DdpmConfig, rng: RngStream) -> DdpmState:
    """Update the innovation probability from the tie indicators.

    Conjugate mode draws Beta(a0 + sum b, b0 + sum(1-b)) over the active
    components. The Metropolis-Hastings mode proposes from a truncated
    normal and targets the same conditional (the fresh-stick Beta densities
    do not involve phi, so they cancel from the ratio); it exists as an
    agreement cross-check.
    """
    if config.fix_phi is not None:
        return state
    cs = state.c_star
    n_fresh = float(np.count_nonzero(state.b[:cs]))
    n_tied = float(cs - n_fresh)
    a0, b0 = config.phi_prior.alpha, config.phi_prior.beta

    if config.phi_update == "conjugate_indicator":
        state.phi = float(rng.beta(a0 + n_fresh, b0 + n_tied))
        return state

    def log_target(phi: float) -> float:
        if not 0.0 < phi < 1.0:
            return -math.inf
        return (
            BetaDist(a0, b0).log_density(phi)
            + n_fresh * math.log(phi)
            + n_tied * math.log1p(-phi)
        )

    sd = config.mh_proposal_sd
    proposal = TruncatedNormal(state.phi, sd, 0.0, 1.0)
    phi_star = float(proposal.sample(rng))
    log_ratio = (
        log_target(phi_star)
        - log_target(state.phi)
        + math.log(_truncnorm_mass(state.phi, sd))
        - math.log(_truncnorm_mass(phi_star, sd))
    )
    if math.log(rng.uniform()) < log_ratio:
        state.phi = phi_star
    return state


def _initial_state(kernel, config: DdpmConfig, rng: RngStream) -> DdpmState:
    n_units = kernel.n_units
    init = config.init
    if init == "auto":
        init = "shared" if isinstance(kernel, BinomialKernel) else "singleton"
    z = np.zeros(n_units, dtype=np.int64) if init == "shared" else np.arange(n_units)
    m = config.fix_m if config.fix_m is not None else config.m_prior.sample(rng)
    phi = config.fix_phi if config.fix_phi is not None else config.phi_prior.sample(rng)
    state = DdpmState(
        z=z,
        u=np.zeros(n_units),
        v=np.zeros(0),
        w=np.zeros(0),
        atoms=np.zeros(0),
        m=float(m),
        phi=float(phi),
    )
    if isinstance(kernel, LinearKernel):
        state.sigma2 = kernel.outcome_variance()
    state.atoms = _draw_base_atoms(kernel, config, int(z.max()) + 1, rng)
    step_theta(state, kernel, config, rng)
    step_v_dependent(state, kernel.cc_index, rng)
    step_u_dependent(state, kernel, config, rng)
    return state


def run_ddpm(dataset: Dataset, config: Optional[DdpmConfig] = None,
             rng: Optional[RngStream] = None) -> PosteriorChain:
    """Run the dependent-DP mixture chain on a validated dataset.

    Identical retained quantities to the plain DP mixture, plus the
    dependence parameter phi. The concentration update pools both groups'
    allocations into one partition, matching the shared-atom structure.
    """
    config = config if config is not None else DdpmConfig()
    rng = rng if rng is not None else RngStream(0)
    kernel = make_kernel(dataset)
    state = _initial_state(kernel, config, rng)
    binomial = isinstance(kernel, BinomialKernel)

    n_keep = config.n_retained
    z_out = np.empty((n_keep, kernel.n_units), dtype=np.int16)
    m_out = np.empty(n_keep)
    k_out = np.empty(n_keep, dtype=np.int16)
    phi_out = np.empty(n_keep)
    if binomial:
        pi_cc_out = np.empty(n_keep)
    else:
        gamma_out = np.empty(n_keep)
        sigma2_out = np.empty(n_keep)

    kept = 0
    for it in range(config.iters):
        step_theta(state, kernel, config, rng)
        step_v_dependent(state, kernel.cc_index, rng)
        step_u_dependent(state, kernel, config, rng)
        step_z_dependent(state, kernel, config, rng)
        truncate_to_bound(state)
        step_phi(state, config, rng)
        step_m_dependent(state, config, rng)
        if not binomial and not config.prior_only:
            step_nuisance_ipd(state, kernel, config, rng)
        if it < config.burn_in or (it - config.burn_in) % config.thin:
            continue
        z_out[kept] = state.z
        m_out[kept] = state.m
        k_out[kept] = state.occupied_count()
        phi_out[kept] = state.phi
        if binomial:
            pi_cc_out[kept] = state.atoms[state.z[kernel.cc_index]]
        else:
            gamma_out[kept] = state.gamma_trt
            sigma2_out[kept] = state.sigma2
        kept += 1

    ct_post = _ct_posterior(dataset, config)
    pi_ct_out = ct_post.sample(rng, size=n_keep) if ct_post is not None else None

    cc = dataset.current_control
    meta = {
        "sampler": "ddpm",
        "seed": rng.seed,
        "stream_id": rng.stream_id,
        "config_digest": config_digest(config),
        "iters": config.iters,
        "burn_in": config.burn_in,
        "thin": config.thin,
    }
    return PosteriorChain(
        kind=dataset.outcome_kind,
        control_ids=tuple(kernel.ids),
        cc_index=kernel.cc_index,
        n_cc=int(cc.payload.n),
        pi_cc=pi_cc_out if binomial else None,
        pi_ct=pi_ct_out,
        gamma=None if binomial else gamma_out,
        sigma2=None if binomial else sigma2_out,
        z=z_out,
        m=m_out,
        phi=phi_out,
        k=k_out,
        meta=meta,
    )
