"""Dirichlet-process mixture sampler for historical-control borrowing.

The control studies (historical plus current) share a DP-distributed study
parameter: binomial response probabilities with a Beta base measure, or IPD
coefficient vectors with a diffuse normal base and a common error variance.
Inference runs a Gibbs sweep over the slice-augmented stick-breaking
representation, so only finitely many components are touched per sweep:

* cluster atoms from their conjugate posteriors (empty components from the
  base measure),
* stick variables given allocations with the slice variables integrated out,
* slice variables uniform below their component's weight, extending the
  stick list until the retained weight mass covers every slice,
* allocations from the likelihood-weighted admissible components,
* the concentration parameter by the auxiliary-variable gamma-mixture step,
* and, for IPD, the common error variance and the current trial's treatment
  coefficient.

The sweep order (atoms, sticks, slices, allocations) is the blocking for
which sampling sticks without conditioning on slices is valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .conjugate import BetaPosterior
from .data import Dataset
from .kernels import BinomialKernel, LinearKernel, make_kernel
from .manifest import config_digest
from .posterior import PosteriorChain
from .rng import Gamma, RngStream, cholesky_with_jitter

__all__ = [
    "ConfigError",
    "SamplerAbort",
    "EmptySlice",
    "ComponentCapExceeded",
    "DpmConfig",
    "ClusterState",
    "run_dpm",
    "step_theta",
    "step_v",
    "step_u",
    "step_z",
    "step_m",
    "step_nuisance_ipd",
    "truncate_to_bound",
]


class ConfigError(ValueError):
    """Invalid iteration counts or sampler switches."""


class SamplerAbort(RuntimeError):
    """Chain cannot continue; the run is aborted with a diagnostic."""


class EmptySlice(SamplerAbort):
    """A study has no admissible component: slice bookkeeping is broken."""


class ComponentCapExceeded(SamplerAbort):
    """Stick list grew past the safety cap while covering the slices."""


@dataclass(frozen=True)
class DpmConfig:
    """Priors and run lengths for the DP mixture sampler.

    ``fix_m`` pins the concentration parameter, ``prior_only`` forces the
    likelihood to one (both used by distribution-level diagnostics), and
    ``init`` chooses the starting partition: ``auto`` starts binomial runs in
    one shared cluster and IPD runs as singletons, where the diffuse
    coefficient base makes fresh splits from a shared state unreachable.
    """

    iters: int = 22_000
    burn_in: int = 2_000
    thin: int = 1
    base_beta: BetaPosterior = BetaPosterior(0.5, 0.5)
    ct_prior: BetaPosterior = BetaPosterior(0.5, 0.5)
    coef_prior_sd: float = 1000.0
    trt_prior_sd: float = 1000.0
    sigma2_prior: tuple = (0.01, 0.01)
    m_prior: Gamma = Gamma(1.0, 1.0)
    m_update: str = "stick_conditional"  # or "escobar_west"
    init: str = "auto"  # auto | shared | singleton
    fix_m: Optional[float] = None
    prior_only: bool = False
    max_components: int = 512

    def __post_init__(self):
        if not (self.iters > self.burn_in >= 0):
            raise ConfigError(
                f"need iters > burn_in >= 0, got iters={self.iters}, burn_in={self.burn_in}"
            )
        if self.thin < 1:
            raise ConfigError(f"thin must be >= 1, got {self.thin}")
        if self.init not in ("auto", "shared", "singleton"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.m_update not in ("stick_conditional", "escobar_west"):
            raise ConfigError(f"unknown m_update {self.m_update!r}")
        if self.fix_m is not None and self.fix_m <= 0:
            raise ConfigError("fix_m must be positive")

    @property
    def n_retained(self) -> int:
        return (self.iters - self.burn_in + self.thin - 1) // self.thin


@dataclass
class ClusterState:
    """Mutable sampler state: one slice-augmented stick-breaking mixture."""

    z: np.ndarray            # allocation per control unit
    u: np.ndarray            # slice variable per control unit
    v: np.ndarray            # stick variables, length = active list
    w: np.ndarray            # derived weights
    atoms: np.ndarray        # (L,) response probabilities or (L, p) coefficients
    m: float                 # concentration
    c_star: int = 0          # slice-bound component count
    sigma2: float = 1.0      # IPD common error variance
    gamma_trt: float = 0.0   # IPD treatment coefficient

    @property
    def n_units(self) -> int:
        return self.z.size

    def occupied_count(self) -> int:
        return int(np.count_nonzero(np.bincount(self.z)))


def stick_weights(v: np.ndarray) -> np.ndarray:
    """w_c = v_c * prod_{c'<c}(1 - v_{c'})."""
    if v.size == 0:
        return v.copy()
    tail = np.concatenate(([1.0], np.cumprod(1.0 - v[:-1])))
    return v * tail


def _clip_stick(v):
    """Keep stick draws strictly inside (0, 1); extreme concentration values
    otherwise round them to the endpoints and break weight invariants."""
    return np.clip(v, 1e-15, 1.0 - 1e-12)


Kernel = Union[BinomialKernel, LinearKernel]


def _draw_base_atoms(kernel: Kernel, config: DpmConfig, count: int, rng: RngStream):
    if isinstance(kernel, BinomialKernel):
        return rng.beta(config.base_beta.alpha, config.base_beta.beta, size=count)
    return rng.normal(0.0, config.coef_prior_sd, size=(count, kernel.p))


def step_theta(state: ClusterState, kernel: Kernel, config: DpmConfig,
               rng: RngStream) -> ClusterState:
    """Redraw every listed atom: conjugate posterior if occupied, base if empty.

    For binomial data the two cases coincide: a cluster with no members has
    the plain Beta base as its "posterior".
    """
    n_components = state.atoms.shape[0]
    if config.prior_only:
        state.atoms = _draw_base_atoms(kernel, config, n_components, rng)
        return state
    if isinstance(kernel, BinomialKernel):
        alpha, beta = kernel.posterior_params(
            state.z, n_components, config.base_beta.alpha, config.base_beta.beta
        )
        state.atoms = rng.beta(alpha, beta)
        return state

    p = kernel.p
    xtx = np.zeros((n_components, p, p))
    xty = np.zeros((n_components, p))
    np.add.at(xtx, state.z, kernel.xtx)
    np.add.at(xty, state.z, kernel.xty)
    if kernel.trt_n:
        xty[state.z[kernel.cc_index]] -= state.gamma_trt * kernel.trt_sum_x
    prec = xtx / state.sigma2 + (config.coef_prior_sd**-2) * np.eye(p)[None, :, :]
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        chol = np.stack([cholesky_with_jitter(prec[c]) for c in range(n_components)])
    mean = np.linalg.solve(prec, (xty / state.sigma2)[..., None])[..., 0]
    noise = rng.standard_normal((n_components, p))
    # x = mean + L^-T noise gives covariance prec^-1.
    state.atoms = mean + np.linalg.solve(np.swapaxes(chol, 1, 2), noise[..., None])[..., 0]
    return state


def step_v(state: ClusterState, rng: RngStream) -> ClusterState:
    """Refresh stick variables given allocations (slices integrated out).

    Components up to the highest occupied index get Beta(1 + n_c, M + m_c)
    with n_c members at c and m_c members beyond c; the list is truncated
    there, and the slice step re-extends it with Beta(1, M) tail draws as
    needed.
    """
    length = int(state.z.max()) + 1
    n_c = np.bincount(state.z, minlength=length).astype(float)
    m_c = state.n_units - np.cumsum(n_c)
    state.v = _clip_stick(rng.beta(1.0 + n_c, state.m + m_c))
    state.w = stick_weights(state.v)
    state.atoms = state.atoms[:length]
    return state


def step_u(state: ClusterState, kernel: Kernel, config: DpmConfig,
           rng: RngStream) -> ClusterState:
    """Slice variables u_j ~ Uniform(0, w_{z_j}); then cover all slices.

    The stick list is extended lazily until the retained mass exceeds
    1 - min_j u_j, which bounds the components any allocation update can
    reach; ``c_star`` records that bound.
    """
    state.u = state.w[state.z] * rng.uniform(size=state.n_units)
    # Guard against float saturation for extreme slices: components beyond a
    # retained mass of 1 - 1e-12 carry negligible probability.
    target = min(1.0 - float(state.u.min()), 1.0 - 1e-12)

    total = float(state.w.sum())
    if total <= target:
        tail = float(np.prod(1.0 - state.v))
        new_v, new_w = [], []
        while total <= target:
            if state.v.size + len(new_v) >= config.max_components:
                raise ComponentCapExceeded(
                    f"stick list exceeded {config.max_components} components"
                )
            vc = float(_clip_stick(rng.beta(1.0, state.m)))
            wc = vc * tail
            new_v.append(vc)
            new_w.append(wc)
            tail *= 1.0 - vc
            total += wc
        state.v = np.concatenate([state.v, new_v])
        state.w = np.concatenate([state.w, new_w])
        state.atoms = np.concatenate(
            [state.atoms, _draw_base_atoms(kernel, config, len(new_v), rng)]
        )
    state.c_star = int(np.searchsorted(np.cumsum(state.w), target, side="right")) + 1
    state.c_star = min(state.c_star, state.w.size)
    return state


def _loglik_table(state: ClusterState, kernel: Kernel, config: DpmConfig,
                  n_components: int) -> np.ndarray:
    if config.prior_only:
        return np.zeros((n_components, kernel.n_units))
    if isinstance(kernel, BinomialKernel):
        return kernel.loglik_table(state.atoms[:n_components])
    return kernel.loglik_table(state.atoms[:n_components], state.gamma_trt, state.sigma2)


def step_z(state: ClusterState, kernel: Kernel, config: DpmConfig,
           rng: RngStream) -> ClusterState:
    """Allocations from the admissible components, likelihood-weighted.

    Admissible for study j are components with w_c > u_j among the first
    c_star; selection probabilities are proportional to f(y_j | atom_c),
    computed in log space (Gumbel-max draw).
    """
    cs = state.c_star
    loglik = _loglik_table(state, kernel, config, cs)
    admissible = state.w[:cs, None] > state.u[None, :]
    if not np.all(admissible.any(axis=0)):
        raise EmptySlice("a study has no admissible component")
    loglik = np.where(admissible, loglik, -np.inf)
    gumbel = rng.gumbel(size=loglik.shape)
    state.z = np.argmax(loglik + gumbel, axis=0)
    return state


def truncate_to_bound(state: ClusterState) -> ClusterState:
    """Drop components beyond the slice bound.

    They are exchangeable prior draws nothing retained refers to, so this is
    plain marginalization; it leaves the stick list with a well-defined
    count for the concentration update.
    """
    cs = state.c_star
    state.v = state.v[:cs]
    state.w = state.w[:cs]
    state.atoms = state.atoms[:cs]
    return state


def step_m(state: ClusterState, config: DpmConfig, rng: RngStream) -> ClusterState:
    """Concentration update under a Gamma(shape, scale) prior.

    Default ("stick_conditional"): the exact conditional given the
    instantiated sticks; each stick is a Beta(1, M) observation, so
    M | v ~ Gamma(shape + count, 1/scale - sum log(1 - v_c)). This is the
    correct Gibbs step for the slice-augmented state.

    "escobar_west": the classical auxiliary-variable update, eta ~
    Beta(M+1, n) then a two-gamma mixture with shapes (a + k) and
    (a + k - 1), rate 1/scale - log eta, and component odds
    (a + k - 1)/(n * rate). It conditions on the partition through the
    Chinese-restaurant law, which describes the collapsed mixture but not
    the labeled allocation vector the slice sampler carries, so inside this
    sampler it is a (slightly co-clustering-suppressing) approximation;
    retained for comparison runs.
    """
    if config.fix_m is not None:
        return state
    a, scale = config.m_prior.shape, config.m_prior.scale
    if config.m_update == "stick_conditional":
        v = np.clip(state.v, None, 1.0 - 1e-14)
        rate = 1.0 / scale - float(np.log1p(-v).sum())
        state.m = float(rng.gamma(a + v.size, 1.0 / rate))
        return state
    k = state.occupied_count()
    n = state.n_units
    eta = rng.beta(state.m + 1.0, n)
    rate = 1.0 / scale - math.log(eta)
    odds = (a + k - 1.0) / (n * rate)
    shape = a + k if rng.uniform() < odds / (1.0 + odds) else a + k - 1.0
    state.m = float(rng.gamma(shape, 1.0 / rate))
    return state


def step_nuisance_ipd(state: ClusterState, kernel: LinearKernel, config: DpmConfig,
                      rng: RngStream) -> ClusterState:
    """IPD-only block: treatment coefficient, then common error variance.

    gamma is conjugate normal given the treatment-row residuals at the
    current control's coefficients; sigma2 is inverse gamma with the residual
    sum over all control studies plus the current trial.
    """
    if kernel.trt_n:
        resid_sum = kernel.trt_residual_sum(state.atoms[state.z[kernel.cc_index]])
        prec = kernel.trt_n / state.sigma2 + config.trt_prior_sd**-2
        mean = (resid_sum / state.sigma2) / prec
        state.gamma_trt = mean + rng.normal(0.0, 1.0) / math.sqrt(prec)
    a0, b0 = config.sigma2_prior
    ssr = kernel.total_ssr(state.atoms[state.z], state.gamma_trt)
    state.sigma2 = (b0 + 0.5 * ssr) / rng.gamma(a0 + 0.5 * kernel.total_rows, 1.0)
    return state


def _initial_state(kernel: Kernel, config: DpmConfig, rng: RngStream) -> ClusterState:
    n_units = kernel.n_units
    init = config.init
    if init == "auto":
        init = "shared" if isinstance(kernel, BinomialKernel) else "singleton"
    z = np.zeros(n_units, dtype=np.int64) if init == "shared" else np.arange(n_units)
    m = config.fix_m if config.fix_m is not None else config.m_prior.sample(rng)
    state = ClusterState(
        z=z,
        u=np.zeros(n_units),
        v=np.zeros(0),
        w=np.zeros(0),
        atoms=np.zeros(0),
        m=float(m),
    )
    if isinstance(kernel, LinearKernel):
        state.sigma2 = kernel.outcome_variance()
        state.gamma_trt = 0.0
    state.atoms = _draw_base_atoms(kernel, config, int(z.max()) + 1, rng)
    step_theta(state, kernel, config, rng)
    step_v(state, rng)
    step_u(state, kernel, config, rng)
    return state


def _sweep(state: ClusterState, kernel: Kernel, config: DpmConfig,
           rng: RngStream) -> ClusterState:
    step_theta(state, kernel, config, rng)
    step_v(state, rng)
    step_u(state, kernel, config, rng)
    step_z(state, kernel, config, rng)
    truncate_to_bound(state)
    step_m(state, config, rng)
    if isinstance(kernel, LinearKernel) and not config.prior_only:
        step_nuisance_ipd(state, kernel, config, rng)
    return state


def _ct_posterior(dataset: Dataset, config: DpmConfig) -> Optional[BetaPosterior]:
    ct = dataset.current_treatment
    if ct is None or dataset.outcome_kind != "binomial":
        return None
    return config.ct_prior.updated(ct.payload.responses, ct.payload.n - ct.payload.responses)


def run_dpm(dataset: Dataset, config: Optional[DpmConfig] = None,
            rng: Optional[RngStream] = None) -> PosteriorChain:
    """Run the DP-mixture chain on a validated dataset.

    Returns the retained draws: the current control's parameter (binomial
    mode also draws the treatment arm's conjugate posterior per retained
    iteration), the full allocation vector, the concentration parameter, the
    occupied-cluster count, and in IPD mode the treatment coefficient and
    error variance.
    """
    config = config if config is not None else DpmConfig()
    rng = rng if rng is not None else RngStream(0)
    kernel = make_kernel(dataset)
    state = _initial_state(kernel, config, rng)
    binomial = isinstance(kernel, BinomialKernel)

    n_keep = config.n_retained
    z_out = np.empty((n_keep, kernel.n_units), dtype=np.int16)
    m_out = np.empty(n_keep)
    k_out = np.empty(n_keep, dtype=np.int16)
    if binomial:
        pi_cc_out = np.empty(n_keep)
    else:
        gamma_out = np.empty(n_keep)
        sigma2_out = np.empty(n_keep)

    kept = 0
    for it in range(config.iters):
        _sweep(state, kernel, config, rng)
        if it < config.burn_in or (it - config.burn_in) % config.thin:
            continue
        z_out[kept] = state.z
        m_out[kept] = state.m
        k_out[kept] = state.occupied_count()
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
        "sampler": "dpm",
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
        k=k_out,
        meta=meta,
    )
