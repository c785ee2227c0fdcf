"""Outcome kernels shared by the clustering engines.

A kernel packages the control studies of a dataset in sampling order
(historical studies first, current control last) together with whatever
sufficient statistics the Gibbs updates need. Binomial summaries reduce to
response/trial counts; IPD studies reduce to per-study cross products, so a
sweep never touches participant rows. The current trial enters as one unit:
its treatment rows share the current-control coefficient vector plus a
treatment offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np
from scipy.special import gammaln

from .data import Dataset, control_subset

__all__ = ["BinomialKernel", "LinearKernel", "make_kernel"]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class BinomialKernel:
    """Beta-binomial sufficient statistics for the control studies."""

    ids: list
    y: np.ndarray
    n: np.ndarray
    log_choose: np.ndarray
    cc_index: int

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "BinomialKernel":
        controls = control_subset(dataset)
        ordered = list(controls.historical) + [controls.current_control]
        y = np.array([s.payload.responses for s in ordered], dtype=float)
        n = np.array([s.payload.n for s in ordered], dtype=float)
        log_choose = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
        return cls([s.id for s in ordered], y, n, log_choose, len(ordered) - 1)

    @property
    def n_units(self) -> int:
        return self.y.size

    def loglik_table(self, atoms: np.ndarray) -> np.ndarray:
        """Log likelihood of every study under every atom, shape (n_atoms, n_units)."""
        pi = np.clip(np.asarray(atoms, dtype=float)[:, None], 1e-300, 1.0 - 1e-16)
        return (
            self.log_choose[None, :]
            + self.y[None, :] * np.log(pi)
            + (self.n - self.y)[None, :] * np.log1p(-pi)
        )

    def posterior_params(self, z: np.ndarray, n_clusters: int, a0: float, b0: float):
        """Conjugate Beta parameters per cluster given allocations."""
        alpha = a0 + np.bincount(z, weights=self.y, minlength=n_clusters)
        beta = b0 + np.bincount(z, weights=self.n - self.y, minlength=n_clusters)
        return alpha, beta


@dataclass
class LinearKernel:
    """Normal-linear sufficient statistics for IPD control studies.

    Per study unit j: row count, y'y, X'y, X'X. The current-control unit
    includes the current trial's treatment rows; their offset enters through
    ``trt_n``, ``trt_sum_y`` and ``trt_sum_x``.
    """

    ids: list
    nrows: np.ndarray       # (S,)
    yty: np.ndarray         # (S,)
    xty: np.ndarray         # (S, p)
    xtx: np.ndarray         # (S, p, p)
    cc_index: int
    trt_n: int
    trt_sum_y: float
    trt_sum_x: np.ndarray   # (p,)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "LinearKernel":
        controls = control_subset(dataset)
        ordered = list(controls.historical) + [controls.current_control]
        ct = dataset.current_treatment

        nrows, yty, xty, xtx = [], [], [], []
        for s in ordered:
            x, yv = s.payload.covariates, s.payload.outcome
            nrows.append(x.shape[0])
            yty.append(float(yv @ yv))
            xty.append(x.T @ yv)
            xtx.append(x.T @ x)
        p = ordered[0].payload.p
        trt_n, trt_sum_y, trt_sum_x = 0, 0.0, np.zeros(p)
        if ct is not None:
            x, yv = ct.payload.covariates, ct.payload.outcome
            nrows[-1] += x.shape[0]
            yty[-1] += float(yv @ yv)
            xty[-1] = xty[-1] + x.T @ yv
            xtx[-1] = xtx[-1] + x.T @ x
            trt_n = x.shape[0]
            trt_sum_y = float(yv.sum())
            trt_sum_x = x.sum(axis=0)
        return cls(
            [s.id for s in ordered],
            np.array(nrows, dtype=float),
            np.array(yty, dtype=float),
            np.vstack(xty),
            np.stack(xtx),
            len(ordered) - 1,
            trt_n,
            trt_sum_y,
            trt_sum_x,
        )

    @property
    def n_units(self) -> int:
        return self.yty.size

    @property
    def p(self) -> int:
        return self.xty.shape[1]

    @property
    def total_rows(self) -> float:
        return float(self.nrows.sum())

    def ssr_table(self, atoms: np.ndarray, gamma: float) -> np.ndarray:
        """Residual sum of squares of every unit under every atom, (n_atoms, S)."""
        b = np.atleast_2d(np.asarray(atoms, dtype=float))
        ssr = (
            self.yty[None, :]
            - 2.0 * b @ self.xty.T
            + np.einsum("cp,spq,cq->cs", b, self.xtx, b)
        )
        if self.trt_n:
            resid_sum = self.trt_sum_y - b @ self.trt_sum_x
            ssr[:, self.cc_index] += -2.0 * gamma * resid_sum + gamma * gamma * self.trt_n
        return ssr

    def loglik_table(self, atoms: np.ndarray, gamma: float, sigma2: float) -> np.ndarray:
        ssr = self.ssr_table(atoms, gamma)
        return -0.5 * self.nrows[None, :] * (_LOG_2PI + math.log(sigma2)) - ssr / (2.0 * sigma2)

    def cluster_suffstats(self, members: np.ndarray, gamma: float):
        """(X'X, X'y) summed over member units, with the treatment offset removed."""
        xtx = self.xtx[members].sum(axis=0)
        xty = self.xty[members].sum(axis=0)
        if self.trt_n and self.cc_index in members:
            xty = xty - gamma * self.trt_sum_x
        return xtx, xty

    def total_ssr(self, atoms_by_unit: np.ndarray, gamma: float) -> float:
        """Sum of squared residuals across all rows at unit-specific coefficients."""
        b = np.asarray(atoms_by_unit, dtype=float)
        ssr = (
            self.yty
            - 2.0 * np.einsum("sp,sp->s", b, self.xty)
            + np.einsum("sp,spq,sq->s", b, self.xtx, b)
        ).sum()
        if self.trt_n:
            resid_sum = self.trt_sum_y - b[self.cc_index] @ self.trt_sum_x
            ssr += -2.0 * gamma * resid_sum + gamma * gamma * self.trt_n
        return float(ssr)

    def trt_residual_sum(self, beta_cc: np.ndarray) -> float:
        """Sum of treatment-row residuals at the current-control coefficients."""
        return float(self.trt_sum_y - beta_cc @ self.trt_sum_x)

    def outcome_variance(self) -> float:
        """Pooled raw outcome variance; used to initialize the error variance."""
        n = self.total_rows
        mean = (self.xty[:, 0].sum() + 0.0) / n  # first column is the intercept
        return max(float(self.yty.sum() / n - mean * mean), 1e-8)


def make_kernel(dataset: Dataset):
    if dataset.outcome_kind == "binomial":
        return BinomialKernel.from_dataset(dataset)
    return LinearKernel.from_dataset(dataset)
