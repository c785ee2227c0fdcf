"""Seedable random-variate generation with reproducible stream semantics.

Every sampler in this package draws through an :class:`RngStream`, a thin
wrapper around a counter-based Philox generator keyed by ``(seed, stream_id)``.
Identical keys reproduce identical draw sequences; distinct stream ids give
statistically independent streams, so simulation replicates and parallel
chains can be keyed off one master seed without draw-order coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import betaln, gammaln, ndtr, ndtri

__all__ = [
    "InvalidParameter",
    "RngStream",
    "Beta",
    "Gamma",
    "InverseGamma",
    "Normal",
    "TruncatedNormal",
    "MultivariateNormal",
    "Bernoulli",
    "Binomial",
    "Uniform",
    "Categorical",
    "draw",
    "log_density",
]

_MASK64 = (1 << 64) - 1
_LOG_2PI = math.log(2.0 * math.pi)


class InvalidParameter(ValueError):
    """Raised for distribution parameters outside their valid domain."""


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_stream_id(*tags: int) -> int:
    """Fold integer tags into a 64-bit stream id (splitmix64 chaining).

    Used to hand independent substreams to replicates, methods, and chains.
    The map is fixed, so adding a new consumer tag never perturbs the
    streams of existing ones.
    """
    acc = 0
    for tag in tags:
        acc = _splitmix64(acc ^ (int(tag) & _MASK64))
    return acc


class RngStream:
    """One reproducible random stream, keyed by ``(seed, stream_id)``.

    The underlying bit generator is Philox (counter-based), keyed directly
    with the pair, so streams never need jump-ahead bookkeeping. ``position``
    counts completed draw operations; it advances deterministically given a
    deterministic draw order.

    A stream is single-threaded. Create substreams for independent workers
    instead of sharing one stream.
    """

    __slots__ = ("seed", "stream_id", "position", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self.position = 0

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"RngStream(seed={self.seed}, stream_id={self.stream_id}, "
            f"position={self.position})"
        )

    def substream(self, *tags: int) -> "RngStream":
        """Return an independent stream derived from this stream's id and tags."""
        return RngStream(self.seed, derive_stream_id(self.stream_id, *tags))

    # -- typed draw helpers ------------------------------------------------
    # Each call counts as one position tick regardless of the output size,
    # matching "one draw operation" semantics.

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        self.position += 1
        return self._gen.uniform(lo, hi, size=size)

    def beta(self, a, b, size=None):
        self.position += 1
        return self._gen.beta(a, b, size=size)

    def gamma(self, shape, scale=1.0, size=None):
        # numpy's Generator.gamma is exact for shape < 1 as well: it boosts a
        # Gamma(shape + 1) draw by U^(1/shape), which the Escobar-West update
        # relies on when a + k - 1 falls below one.
        self.position += 1
        return self._gen.gamma(shape, scale, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.position += 1
        return self._gen.normal(loc, scale, size=size)

    def standard_normal(self, size=None):
        self.position += 1
        return self._gen.standard_normal(size=size)

    def binomial(self, n, p, size=None):
        self.position += 1
        return self._gen.binomial(n, p, size=size)

    def gumbel(self, size=None):
        self.position += 1
        return self._gen.gumbel(size=size)

    def integers(self, lo, hi, size=None):
        self.position += 1
        return self._gen.integers(lo, hi, size=size)

    def choice_index(self, probabilities: np.ndarray) -> int:
        """Draw one categorical index from (already normalized) probabilities."""
        self.position += 1
        u = self._gen.uniform()
        return int(np.searchsorted(np.cumsum(probabilities), u))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidParameter(message)


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        _require(self.a > 0 and self.b > 0, f"Beta requires a,b > 0, got ({self.a}, {self.b})")

    def sample(self, rng: RngStream, size=None):
        return rng.beta(self.a, self.b, size=size)

    def log_density(self, x) -> float:
        if not 0.0 < x < 1.0:
            return -math.inf
        return (
            (self.a - 1.0) * math.log(x)
            + (self.b - 1.0) * math.log1p(-x)
            - betaln(self.a, self.b)
        )

    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def variance(self) -> float:
        s = self.a + self.b
        return self.a * self.b / (s * s * (s + 1.0))


@dataclass(frozen=True)
class Gamma:
    shape: float
    scale: float

    def __post_init__(self):
        _require(self.shape > 0 and self.scale > 0,
                 f"Gamma requires shape,scale > 0, got ({self.shape}, {self.scale})")

    def sample(self, rng: RngStream, size=None):
        return rng.gamma(self.shape, self.scale, size=size)

    def log_density(self, x) -> float:
        if x <= 0.0:
            return -math.inf
        return (
            (self.shape - 1.0) * math.log(x)
            - x / self.scale
            - gammaln(self.shape)
            - self.shape * math.log(self.scale)
        )

    def mean(self) -> float:
        return self.shape * self.scale

    def variance(self) -> float:
        return self.shape * self.scale * self.scale


@dataclass(frozen=True)
class InverseGamma:
    """Inverse gamma with density proportional to x^(-shape-1) exp(-scale/x)."""

    shape: float
    scale: float

    def __post_init__(self):
        _require(self.shape > 0 and self.scale > 0,
                 f"InverseGamma requires shape,scale > 0, got ({self.shape}, {self.scale})")

    def sample(self, rng: RngStream, size=None):
        return self.scale / rng.gamma(self.shape, 1.0, size=size)

    def log_density(self, x) -> float:
        if x <= 0.0:
            return -math.inf
        return (
            self.shape * math.log(self.scale)
            - gammaln(self.shape)
            - (self.shape + 1.0) * math.log(x)
            - self.scale / x
        )

    def mean(self) -> float:
        _require(self.shape > 1, "InverseGamma mean requires shape > 1")
        return self.scale / (self.shape - 1.0)

    def variance(self) -> float:
        _require(self.shape > 2, "InverseGamma variance requires shape > 2")
        return self.scale**2 / ((self.shape - 1.0) ** 2 * (self.shape - 2.0))


@dataclass(frozen=True)
class Normal:
    mu: float
    sd: float

    def __post_init__(self):
        _require(self.sd > 0, f"Normal requires sd > 0, got {self.sd}")

    def sample(self, rng: RngStream, size=None):
        return rng.normal(self.mu, self.sd, size=size)

    def log_density(self, x) -> float:
        z = (x - self.mu) / self.sd
        return -0.5 * _LOG_2PI - math.log(self.sd) - 0.5 * z * z

    def mean(self) -> float:
        return self.mu

    def variance(self) -> float:
        return self.sd * self.sd


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(mu, sd) restricted to [lo, hi], sampled by inverse CDF."""

    mu: float
    sd: float
    lo: float
    hi: float

    def __post_init__(self):
        _require(self.sd > 0, f"TruncatedNormal requires sd > 0, got {self.sd}")
        _require(self.lo < self.hi,
                 f"TruncatedNormal requires lo < hi, got ({self.lo}, {self.hi})")

    def _cdf_bounds(self):
        a = (self.lo - self.mu) / self.sd
        b = (self.hi - self.mu) / self.sd
        return ndtr(a), ndtr(b)

    def sample(self, rng: RngStream, size=None):
        fa, fb = self._cdf_bounds()
        u = rng.uniform(size=size)
        x = self.mu + self.sd * ndtri(fa + u * (fb - fa))
        # Inverse-CDF round-off can graze the bounds; clamp to the support.
        return np.clip(x, self.lo, self.hi) if size is not None else \
            min(max(x, self.lo), self.hi)

    def log_density(self, x) -> float:
        if not self.lo <= x <= self.hi:
            return -math.inf
        fa, fb = self._cdf_bounds()
        z = (x - self.mu) / self.sd
        return (
            -0.5 * _LOG_2PI - math.log(self.sd) - 0.5 * z * z
            - math.log(fb - fa)
        )

    def mean(self) -> float:
        a = (self.lo - self.mu) / self.sd
        b = (self.hi - self.mu) / self.sd
        za = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
        zb = math.exp(-0.5 * b * b) / math.sqrt(2.0 * math.pi)
        denom = ndtr(b) - ndtr(a)
        return self.mu + self.sd * (za - zb) / denom

    def variance(self) -> float:
        a = (self.lo - self.mu) / self.sd
        b = (self.hi - self.mu) / self.sd
        za = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
        zb = math.exp(-0.5 * b * b) / math.sqrt(2.0 * math.pi)
        denom = ndtr(b) - ndtr(a)
        ratio = (za - zb) / denom
        return self.sd**2 * (1.0 + (a * za - b * zb) / denom - ratio**2)


@dataclass(frozen=True)
class MultivariateNormal:
    mean_vector: tuple
    covariance: tuple

    def __post_init__(self):
        mean = np.asarray(self.mean_vector, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        _require(mean.ndim == 1, "MultivariateNormal mean must be a vector")
        _require(cov.shape == (mean.size, mean.size),
                 "MultivariateNormal covariance shape must match the mean")
        _require(np.allclose(cov, cov.T), "MultivariateNormal covariance must be symmetric")
        object.__setattr__(self, "mean_vector", tuple(mean))
        object.__setattr__(self, "covariance", tuple(map(tuple, cov)))

    def _factor(self) -> np.ndarray:
        cov = np.asarray(self.covariance, dtype=float)
        return cholesky_with_jitter(cov)

    def sample(self, rng: RngStream, size=None):
        mean = np.asarray(self.mean_vector, dtype=float)
        chol = self._factor()
        if size is None:
            return mean + chol @ rng.standard_normal(mean.size)
        return mean + rng.standard_normal((size, mean.size)) @ chol.T

    def log_density(self, x) -> float:
        mean = np.asarray(self.mean_vector, dtype=float)
        chol = self._factor()
        diff = np.asarray(x, dtype=float) - mean
        sol = np.linalg.solve(chol, diff)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return -0.5 * (mean.size * _LOG_2PI + logdet + float(sol @ sol))


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        _require(0.0 <= self.p <= 1.0, f"Bernoulli requires p in [0,1], got {self.p}")

    def sample(self, rng: RngStream, size=None):
        if size is None:
            return int(rng.uniform() < self.p)
        return (rng.uniform(size=size) < self.p).astype(int)

    def log_density(self, x) -> float:
        if x == 1:
            return math.log(self.p) if self.p > 0 else -math.inf
        if x == 0:
            return math.log1p(-self.p) if self.p < 1 else -math.inf
        return -math.inf

    def mean(self) -> float:
        return self.p

    def variance(self) -> float:
        return self.p * (1.0 - self.p)


@dataclass(frozen=True)
class Binomial:
    n: int
    p: float

    def __post_init__(self):
        _require(self.n > 0 and self.n == int(self.n),
                 f"Binomial requires positive integer n, got {self.n}")
        _require(0.0 <= self.p <= 1.0, f"Binomial requires p in [0,1], got {self.p}")

    def sample(self, rng: RngStream, size=None):
        if size is None:
            return int(rng.binomial(self.n, self.p))
        return rng.binomial(self.n, self.p, size=size)

    def log_density(self, x) -> float:
        if x != int(x) or not 0 <= x <= self.n:
            return -math.inf
        return binomial_logpmf(int(x), self.n, self.p)

    def mean(self) -> float:
        return self.n * self.p

    def variance(self) -> float:
        return self.n * self.p * (1.0 - self.p)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        _require(self.lo < self.hi, f"Uniform requires lo < hi, got ({self.lo}, {self.hi})")

    def sample(self, rng: RngStream, size=None):
        return rng.uniform(self.lo, self.hi, size=size)

    def log_density(self, x) -> float:
        if not self.lo <= x <= self.hi:
            return -math.inf
        return -math.log(self.hi - self.lo)

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def variance(self) -> float:
        return (self.hi - self.lo) ** 2 / 12.0


@dataclass(frozen=True)
class Categorical:
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        _require(w.ndim == 1 and w.size > 0, "Categorical requires a weight vector")
        _require(np.all(w >= 0) and w.sum() > 0,
                 "Categorical requires nonnegative weights with positive sum")
        object.__setattr__(self, "weights", tuple(w))

    def _probs(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        return w / w.sum()

    def sample(self, rng: RngStream, size=None):
        if size is None:
            return rng.choice_index(self._probs())
        cumulative = np.cumsum(self._probs())
        return np.searchsorted(cumulative, rng.uniform(size=size))

    def log_density(self, x) -> float:
        if x != int(x) or not 0 <= int(x) < len(self.weights):
            return -math.inf
        p = self._probs()[int(x)]
        return math.log(p) if p > 0 else -math.inf

    def mean(self) -> float:
        p = self._probs()
        return float(np.arange(p.size) @ p)

    def variance(self) -> float:
        p = self._probs()
        idx = np.arange(p.size)
        m = float(idx @ p)
        return float((idx - m) ** 2 @ p)


DistSpec = Union[
    Beta,
    Gamma,
    InverseGamma,
    Normal,
    TruncatedNormal,
    MultivariateNormal,
    Bernoulli,
    Binomial,
    Uniform,
    Categorical,
]


def draw(dist: DistSpec, rng: RngStream, size=None):
    """Draw from ``dist``, advancing ``rng`` deterministically.

    ``size=None`` returns one sample (a scalar, or a vector for the
    multivariate normal); an integer returns that many.
    """
    return dist.sample(rng, size=size)


def log_density(dist: DistSpec, x) -> float:
    """Natural-log density (or mass) of ``dist`` at ``x``.

    Points outside the support return ``-inf`` rather than raising: samplers
    use this to reject and move on.
    """
    return dist.log_density(x)


def binomial_logpmf(y: int, n: int, p: float) -> float:
    """Log pmf of Binomial(n, p) at y, safe at p in {0, 1}."""
    if p <= 0.0:
        return 0.0 if y == 0 else -math.inf
    if p >= 1.0:
        return 0.0 if y == n else -math.inf
    return (
        gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
        + y * math.log(p)
        + (n - y) * math.log1p(-p)
    )


def cholesky_with_jitter(matrix: np.ndarray, relative: float = 1e-10,
                         max_tries: int = 8) -> np.ndarray:
    """Lower Cholesky factor, retrying with escalating diagonal jitter.

    Near-singular cross-product matrices from small clusters factor after a
    jitter of ``relative`` times the mean diagonal; the jitter grows tenfold
    per retry before giving up.
    """
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    base = relative * max(float(np.mean(np.diag(matrix))), 1.0)
    eye = np.eye(matrix.shape[0])
    for attempt in range(max_tries):
        try:
            return np.linalg.cholesky(matrix + base * (10.0**attempt) * eye)
        except np.linalg.LinAlgError:
            continue
    raise InvalidParameter("covariance is not positive semi-definite even after jitter")
