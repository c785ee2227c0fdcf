import math

import numpy as np
import pytest

from dpborrow.conjugate import (
    BetaPosterior,
    MissingArm,
    RankDeficient,
    cd_binomial,
    cd_posteriors,
    linear_regression_gibbs,
    pd_binomial,
    pd_posteriors,
)
from dpborrow.data import Dataset, IpdPayload, Study, StudyRole
from dpborrow.rng import RngStream

from conftest import binomial_dataset


def test_cd_posterior_parameters_are_exact(as_case1):
    post_cc, post_ct = cd_posteriors(as_case1)
    assert post_cc == BetaPosterior(1.5, 5.5)
    assert post_ct == BetaPosterior(14.5, 9.5)


def test_pd_posterior_parameters_are_exact(as_case1):
    post_pool, post_ct = pd_posteriors(as_case1)
    # 127 historical responses + 1 current, 513 + 6 participants
    assert post_pool == BetaPosterior(128.5, 391.5)
    assert post_ct == BetaPosterior(14.5, 9.5)


def test_cd_case1_summary(as_case1):
    draws = cd_binomial(as_case1, rng=RngStream(1))
    assert abs(100 * draws.mean() - 39.1) < 0.5
    assert abs(100 * draws.std(ddof=1) - 17.4) < 0.5


def test_pd_case_summaries(as_case1, as_case2):
    d1 = pd_binomial(as_case1, rng=RngStream(2))
    assert abs(100 * d1.mean() - 35.7) < 0.5
    assert abs(100 * d1.std(ddof=1) - 9.9) < 0.5
    d2 = pd_binomial(as_case2, rng=RngStream(3))
    assert abs(100 * d2.mean() - 33.4) < 0.5
    assert abs(100 * d2.std(ddof=1) - 10.0) < 0.5


def test_single_observation_update():
    post = BetaPosterior(0.5, 0.5).updated(0, 1)
    assert post == BetaPosterior(0.5, 1.5)
    assert post.mean == pytest.approx(0.25)


def test_symmetric_arms_give_zero_effect():
    ds = binomial_dataset([], cc=(3, 10), ct=(3, 10))
    draws = cd_binomial(ds, rng=RngStream(4))
    mc_sd = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean()) < 3 * mc_sd


def test_pd_with_no_historicals_equals_cd():
    ds = binomial_dataset([], cc=(1, 6), ct=(14, 23))
    assert pd_posteriors(ds) == cd_posteriors(ds)


def test_missing_arm():
    ds = binomial_dataset([(5, 10)], cc=(1, 6))
    with pytest.raises(MissingArm):
        cd_binomial(ds, rng=RngStream(5))


def _ipd_dataset(rng, n=120, beta0=(2.0, 0.5, -1.0), gamma=-1.5, sd=1.0):
    x_cc = np.column_stack([np.ones(n), rng.normal(0, 1, size=n), rng.uniform(0, 1, size=n)])
    x_ct = np.column_stack([np.ones(n), rng.normal(0, 1, size=n), rng.uniform(0, 1, size=n)])
    y_cc = x_cc @ beta0 + rng.normal(0, sd, size=n)
    y_ct = x_ct @ beta0 + gamma + rng.normal(0, sd, size=n)
    studies = (
        Study("CC", StudyRole.CURRENT_CONTROL, IpdPayload(x_cc, np.zeros(n), y_cc)),
        Study("CT", StudyRole.CURRENT_TREATMENT, IpdPayload(x_ct, np.ones(n), y_ct)),
    )
    return Dataset("ipd", studies, meta={"covariate_names": ["x1", "x2"]})


def test_gibbs_fixed_sigma2_matches_closed_form():
    rng = RngStream(10)
    ds = _ipd_dataset(rng)
    fit = linear_regression_gibbs(ds, "current_only", iters=6000, burn_in=1000,
                                  rng=RngStream(11), fix_sigma2=1.0)
    design = np.vstack([
        np.column_stack([s.payload.covariates, s.payload.treatment])
        for s in ds.studies
    ])
    y = np.concatenate([s.payload.outcome for s in ds.studies])
    prec = design.T @ design / 1.0 + np.eye(4) / 1000.0**2
    mean = np.linalg.solve(prec, design.T @ y / 1.0)
    cov = np.linalg.inv(prec)
    for j in range(4):
        mc_se = math.sqrt(cov[j, j] / fit.coef.shape[0])
        # draws are exact and independent under fixed variance
        assert abs(fit.coef[:, j].mean() - mean[j]) < 3 * mc_se * 1.5
    emp_cov = np.cov(fit.coef.T)
    assert np.allclose(emp_cov, cov, atol=4 * np.abs(cov).max() / math.sqrt(5000))


def test_gibbs_zero_noise_interpolates():
    rng = RngStream(12)
    n = 80
    x = np.column_stack([np.ones(n), rng.normal(0, 1, size=n)])
    beta0 = np.array([1.0, 2.0])
    studies = (
        Study("CC", StudyRole.CURRENT_CONTROL, IpdPayload(x, np.zeros(n), x @ beta0)),
        Study("CT", StudyRole.CURRENT_TREATMENT,
              IpdPayload(x, np.ones(n), x @ beta0 - 0.5)),
    )
    ds = Dataset("ipd", studies, meta={"covariate_names": ["x1"]})
    fit = linear_regression_gibbs(ds, "current_only", iters=4000, burn_in=1000,
                                  rng=RngStream(13))
    est = fit.coef.mean(axis=0)
    assert abs(est[0] - 1.0) < 1e-3
    assert abs(est[1] - 2.0) < 1e-3
    assert abs(est[2] - (-0.5)) < 1e-3


def test_gibbs_pooled_uses_all_controls():
    rng = RngStream(14)
    ds_small = _ipd_dataset(rng, n=25)
    hist = []
    for k in range(3):
        n = 100
        x = np.column_stack([np.ones(n), rng.normal(0, 1, size=n), rng.uniform(0, 1, size=n)])
        y = x @ np.array([2.0, 0.5, -1.0]) + rng.normal(0, 1, size=n)
        hist.append(Study(f"H{k}", StudyRole.HISTORICAL, IpdPayload(x, np.zeros(n), y)))
    ds = Dataset("ipd", tuple(hist) + ds_small.studies, meta=ds_small.meta)
    cd = linear_regression_gibbs(ds, "current_only", iters=4000, burn_in=1000,
                                 rng=RngStream(15))
    pd_fit = linear_regression_gibbs(ds, "pooled", iters=4000, burn_in=1000,
                                     rng=RngStream(16))
    # pooling 300 extra control rows tightens the intercept posterior
    assert pd_fit.coef[:, 0].std() < cd.coef[:, 0].std()
    assert pd_fit.trt_index == 3


def test_gibbs_rank_deficient_raises():
    n = 30
    rng = RngStream(17)
    col = rng.normal(0, 1, size=n)
    x = np.column_stack([np.ones(n), col, col])  # exact collinearity
    studies = (
        Study("CC", StudyRole.CURRENT_CONTROL, IpdPayload(x, np.zeros(n), col)),
        Study("CT", StudyRole.CURRENT_TREATMENT, IpdPayload(x, np.ones(n), col)),
    )
    ds = Dataset("ipd", studies, meta={"covariate_names": ["a", "b"]})
    with pytest.raises(RankDeficient):
        linear_regression_gibbs(ds, "current_only", iters=100, burn_in=10,
                                rng=RngStream(18))
