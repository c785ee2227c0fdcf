import math

import numpy as np
import pytest

import dpborrow.simulate as sim
from dpborrow.rng import RngStream
from dpborrow.simulate import (
    BinomialScenario,
    IpdScenario,
    MethodSettings,
    SimPlan,
    SimRun,
    generate_binomial_replicate,
    generate_ipd_replicate,
    run_operating_characteristics,
)
from dpborrow.dpm import DpmConfig
from dpborrow.ddpm import DdpmConfig


def test_scenario_validation():
    with pytest.raises(ValueError):
        BinomialScenario(6)
    with pytest.raises(ValueError):
        BinomialScenario(1, "two-sided")
    with pytest.raises(ValueError):
        IpdScenario(5)
    with pytest.raises(ValueError):
        SimRun("binomial", 1, "null", methods=("cd", "map"))


def test_binomial_scenario1_structure():
    scn = BinomialScenario(1, "null")
    totals = np.zeros(8)
    reps = 400
    for r in range(reps):
        ds = generate_binomial_replicate(scn, RngStream(1, r))
        assert ds.meta["true_pi"] == [0.5] * 9
        assert ds.meta["true_effect"] == 0.0
        assert ds.meta["heterogeneous_ids"] == []
        assert ds.current_control.payload.n == 20
        assert ds.current_treatment.payload.n == 40
        totals += [s.payload.responses for s in ds.historical]
    means = totals / reps
    se = math.sqrt(60 * 0.25 / reps)
    assert np.all(np.abs(means - 30.0) < 5 * se)


def test_binomial_scenario4_rates():
    scn = BinomialScenario(4, "null")
    ds = generate_binomial_replicate(scn, RngStream(2, 0))
    assert ds.meta["true_pi"][:4] == [0.5] * 4
    assert ds.meta["true_pi"][4:8] == [0.2] * 4
    assert ds.meta["true_pi"][8] == 0.5
    assert ds.meta["true_pi_ct"] == 0.5
    assert ds.meta["heterogeneous_ids"] == ["H5", "H6", "H7", "H8"]


def test_binomial_alternative_rate():
    scn = BinomialScenario(1, "alternative")
    ds = generate_binomial_replicate(scn, RngStream(3, 0))
    assert ds.meta["true_pi_ct"] == pytest.approx(0.7452)
    assert ds.meta["true_effect"] == pytest.approx(0.2452)


def test_binomial_scenario2_logit_spread():
    scn = BinomialScenario(2, "null")
    logits = []
    for r in range(4000):
        ds = generate_binomial_replicate(scn, RngStream(4, r))
        pis = np.array(ds.meta["true_pi"])
        logits.extend(np.log(pis / (1 - pis)))
    logits = np.array(logits)
    assert abs(logits.mean()) < 4 * 0.5 / math.sqrt(logits.size)
    assert logits.std(ddof=1) == pytest.approx(0.5, abs=0.01)


def test_ipd_scenario_means():
    ds1 = generate_ipd_replicate(IpdScenario(1, "null"), RngStream(5, 0))
    assert ds1.meta["baseline_means"] == [24.0] * 6
    assert ds1.n_historical == 5
    assert ds1.current_control.payload.n == 60
    assert ds1.current_treatment.payload.n == 60
    assert ds1.current_control.payload.p == 3  # intercept, age, sex

    ds3 = generate_ipd_replicate(IpdScenario(3, "null"), RngStream(5, 1))
    assert ds3.meta["baseline_means"][:4] == [24.0] * 4
    assert ds3.meta["baseline_means"][4] == 30.0
    assert ds3.meta["baseline_means"][5] == 24.0  # current trial stays at 24
    assert ds3.meta["heterogeneous_ids"] == ["H5"]

    ds4 = generate_ipd_replicate(IpdScenario(4, "null"), RngStream(5, 2))
    assert ds4.meta["heterogeneous_ids"] == ["H4", "H5"]


def test_ipd_generator_recovers_coefficients():
    # pooled least squares on the full design (including the baseline column)
    # recovers the generating coefficients
    scn = IpdScenario(1, "alternative")
    rows_x, rows_y = [], []
    for r in range(170):
        ds = generate_ipd_replicate(scn, RngStream(6, r))
        for s in ds.studies:
            base = np.array(ds.meta["baseline_values"][s.id])
            x = s.payload.covariates
            rows_x.append(np.column_stack([
                np.ones(len(base)), x[:, 1] - 50.0, x[:, 2], base, s.payload.treatment,
            ]))
            rows_y.append(s.payload.outcome)
    design = np.vstack(rows_x)
    y = np.concatenate(rows_y)
    assert design.shape[0] > 100_000
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    assert coef[0] == pytest.approx(5.0, abs=0.05)
    assert coef[1] == pytest.approx(0.2, abs=0.02)
    assert coef[2] == pytest.approx(1.0, abs=0.02)
    assert coef[3] == pytest.approx(1.0, abs=0.02)
    assert coef[4] == pytest.approx(sim.IPD_ALT_EFFECT, abs=0.02)


def _small_settings():
    return MethodSettings(
        dpm=DpmConfig(iters=800, burn_in=200),
        ddpm=DdpmConfig(iters=800, burn_in=200),
        conjugate_draws=20_000,
        gibbs_iters=900,
        gibbs_burn_in=200,
    )


def test_metrics_table_shape_and_lookup():
    plan = SimPlan((
        SimRun("binomial", 1, "null", methods=("cd", "pd"), replicates=12),
        SimRun("binomial", 4, "null", methods=("cd", "pd"), replicates=12),
    ))
    table = run_operating_characteristics(plan, master_seed=5, settings=_small_settings(),
                                          threads=1)
    methods = {(c.scenario_id, c.method) for c in table.cells}
    assert methods == {(1, "cd"), (1, "pd"), (4, "cd"), (4, "pd")}
    metrics = {c.metric for c in table.cells}
    assert metrics == {"bias", "rmse", "mean_post_sd", "coverage", "type_i_error"}
    assert table.value("binomial", 1, "null", "cd", "coverage") >= 0.0
    with pytest.raises(KeyError):
        table.value("binomial", 2, "null", "cd", "coverage")


def test_determinism_across_threads():
    plan = SimPlan((SimRun("binomial", 3, "null", methods=("cd", "dpm"), replicates=8),))
    t1 = run_operating_characteristics(plan, master_seed=11, settings=_small_settings(),
                                       threads=1)
    t2 = run_operating_characteristics(plan, master_seed=11, settings=_small_settings(),
                                       threads=2)
    assert t1 == t2


def test_adding_method_does_not_perturb_existing_draws():
    settings = _small_settings()
    plan_small = SimPlan((SimRun("binomial", 1, "null", methods=("cd",), replicates=6),))
    plan_big = SimPlan((SimRun("binomial", 1, "null", methods=("cd", "dpm"), replicates=6),))
    t_small = run_operating_characteristics(plan_small, 13, settings, threads=1)
    t_big = run_operating_characteristics(plan_big, 13, settings, threads=1)
    for metric in ("bias", "rmse", "type_i_error"):
        assert t_small.value("binomial", 1, "null", "cd", metric) == \
            t_big.value("binomial", 1, "null", "cd", metric)


def test_failed_replicate_excluded_from_all_methods(monkeypatch):
    original = sim._apply_method
    calls = {"n": 0}

    def flaky(method, dataset, rng, settings):
        if method == "pd" and dataset.meta.get("_rep_marker") == 2:
            raise ValueError("synthetic failure")
        return original(method, dataset, rng, settings)

    original_gen = sim.generate_binomial_replicate
    counter = {"i": -1}

    def tagged_gen(scn, rng):
        ds = original_gen(scn, rng)
        counter["i"] += 1
        ds.meta["_rep_marker"] = counter["i"]
        return ds

    monkeypatch.setattr(sim, "_apply_method", flaky)
    monkeypatch.setattr(sim, "generate_binomial_replicate", tagged_gen)
    plan = SimPlan((SimRun("binomial", 1, "null", methods=("cd", "pd"), replicates=5),))
    table = run_operating_characteristics(plan, 17, _small_settings(), threads=1)
    assert len(table.failures) == 1
    assert table.failures[0][3] == 2  # replicate index
    for cell in table.cells:
        assert cell.n_replicates == 4


def test_cd_coverage_sane():
    plan = SimPlan((SimRun("binomial", 1, "null", methods=("cd",), replicates=250),))
    table = run_operating_characteristics(plan, 19, _small_settings(), threads=2)
    coverage = table.value("binomial", 1, "null", "cd", "coverage")
    assert 90.0 <= coverage <= 99.5
    type_i = table.value("binomial", 1, "null", "cd", "type_i_error")
    assert type_i <= 7.5


def test_power_reported_under_alternative():
    plan = SimPlan((SimRun("binomial", 1, "alternative", methods=("pd",), replicates=60),))
    table = run_operating_characteristics(plan, 23, _small_settings(), threads=2)
    power = table.value("binomial", 1, "alternative", "pd", "power")
    assert 50.0 <= power <= 100.0


def test_dpm_cells_include_borrowing_diagnostics():
    plan = SimPlan((SimRun("binomial", 1, "null", methods=("dpm",), replicates=4),))
    table = run_operating_characteristics(plan, 29, _small_settings(), threads=1)
    metrics = {c.metric for c in table.cells}
    assert "mean_ehss" in metrics
    assert "mean_cocluster" in metrics


def test_ipd_cocluster_monotone_in_heterogeneity():
    # scenario 1 has no heterogeneous controls, scenario 4 has two: the mean
    # co-clustered count must drop accordingly
    settings = MethodSettings(
        dpm=DpmConfig(iters=900, burn_in=200),
        ddpm=DdpmConfig(iters=900, burn_in=200),
    )
    plan = SimPlan((
        SimRun("ipd", 1, "null", methods=("dpm",), replicates=15),
        SimRun("ipd", 4, "null", methods=("dpm",), replicates=15),
    ))
    table = run_operating_characteristics(plan, 37, settings, threads=2)
    homogeneous = table.value("ipd", 1, "null", "dpm", "mean_cocluster")
    heterogeneous = table.value("ipd", 4, "null", "dpm", "mean_cocluster")
    assert homogeneous > heterogeneous
    assert homogeneous > 4.0
    assert heterogeneous < 4.0


def test_ipd_run_smoke():
    settings = MethodSettings(
        dpm=DpmConfig(iters=500, burn_in=100),
        ddpm=DdpmConfig(iters=500, burn_in=100),
        conjugate_draws=5_000,
        gibbs_iters=500,
        gibbs_burn_in=100,
    )
    plan = SimPlan((SimRun("ipd", 3, "null", methods=("cd", "dpm"), replicates=3),))
    table = run_operating_characteristics(plan, 31, settings, threads=1)
    assert table.value("ipd", 3, "null", "dpm", "mean_cocluster") >= 0.0
    assert {c.method for c in table.cells} == {"cd", "dpm"}
