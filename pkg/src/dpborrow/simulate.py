"""Scenario generators and the operating-characteristics harness.

Binomial scenarios: a current trial (20 control / 40 treatment) plus eight
historical controls of 60 participants. Scenario 1 has a common 50% control
response rate; scenario 2 draws each control's log odds from N(0, 0.5^2);
scenarios 3-5 set the last 2/4/8 historical controls to a 20% rate against
50% elsewhere. Null runs use a 50% treatment rate; alternative runs use
74.52%, calibrated so the current trial alone has about 50% power.

IPD scenarios: a current trial (60 per arm) plus five historical controls of
100 participants. Outcomes follow a linear model in age, sex, and a baseline
score; the baseline acts as an unmeasured factor (kept with the generated
data, excluded from every analysis design). Scenario 1 fixes the baseline
mean at 24; scenario 2 draws study means from N(24, 3^2); scenarios 3-4 move
the last 1/2 historical means to 30.

``run_operating_characteristics`` executes a plan of scenario runs over
independent replicate streams, applies each configured method, and
aggregates bias, RMSE, mean posterior SD, coverage, rejection rate, and the
borrowing diagnostics, each with a Monte Carlo standard error. Replicates
are embarrassingly parallel; aggregation is a deterministic reduction in
replicate order, and a replicate failing any method is excluded from every
method's aggregate (paired comparison preserved) and logged.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from multiprocessing import get_context
from typing import Optional

import numpy as np

from .conjugate import (
    cd_binomial,
    linear_regression_gibbs,
    pd_binomial,
)
from .data import BinomialSummary, Dataset, IpdPayload, Study, StudyRole
from .ddpm import DdpmConfig, run_ddpm
from .dpm import DpmConfig, SamplerAbort, run_dpm
from .posterior import (
    DecisionRule,
    cluster_count_posterior,
    decide,
    effect_summary,
    ehss_moment_matched,
    summarize_draws,
)
from .rng import RngStream, derive_stream_id

__all__ = [
    "BinomialScenario",
    "IpdScenario",
    "SimRun",
    "SimPlan",
    "MethodSettings",
    "MetricsCell",
    "MetricsTable",
    "generate_binomial_replicate",
    "generate_ipd_replicate",
    "run_operating_characteristics",
    "METHOD_CODES",
]

# Fixed registry; adding a method may only append, so existing sub-streams
# never move.
METHOD_CODES = {"cd": 1, "pd": 2, "dpm": 3, "ddpm": 4}

BINOMIAL_ALT_RATE = 0.7452  # current-trial-only power close to 50%
IPD_ALT_EFFECT = -2.88      # same calibration for the linear outcome


@dataclass(frozen=True)
class BinomialScenario:
    scenario_id: int
    hypothesis: str = "null"
    n_historical: int = 8
    n_per_historical: int = 60
    n_cc: int = 20
    n_ct: int = 40
    base_rate: float = 0.5
    shifted_rate: float = 0.2
    logit_sd: float = 0.5

    def __post_init__(self):
        if self.scenario_id not in (1, 2, 3, 4, 5):
            raise ValueError(f"binomial scenario_id must be 1..5, got {self.scenario_id}")
        if self.hypothesis not in ("null", "alternative"):
            raise ValueError(f"hypothesis must be null/alternative, got {self.hypothesis!r}")

    @property
    def n_heterogeneous(self) -> int:
        return {1: 0, 2: 0, 3: 2, 4: 4, 5: 8}[self.scenario_id]

    @property
    def treatment_rate(self) -> float:
        return self.base_rate if self.hypothesis == "null" else BINOMIAL_ALT_RATE


def generate_binomial_replicate(scenario: BinomialScenario, rng: RngStream) -> Dataset:
    """Draw one simulated dataset; true rates land in ``dataset.meta``.

    Heterogeneous studies occupy the last slots of the historical list so
    oracle checks can find them.
    """
    k = scenario.n_historical
    rates = np.full(k + 1, scenario.base_rate)
    het_start = k - scenario.n_heterogeneous
    rates[het_start:k] = scenario.shifted_rate
    if scenario.scenario_id == 2:
        logits = rng.normal(0.0, scenario.logit_sd, size=k + 1)
        rates = 1.0 / (1.0 + np.exp(-logits))

    sizes = np.array([scenario.n_per_historical] * k + [scenario.n_cc])
    responses = rng.binomial(sizes, rates)
    pi_ct = scenario.treatment_rate
    y_ct = int(rng.binomial(scenario.n_ct, pi_ct))

    studies = [
        Study(f"H{j + 1}", StudyRole.HISTORICAL,
              BinomialSummary(int(sizes[j]), int(responses[j])))
        for j in range(k)
    ]
    studies.append(Study("CC", StudyRole.CURRENT_CONTROL,
                         BinomialSummary(scenario.n_cc, int(responses[k]))))
    studies.append(Study("CT", StudyRole.CURRENT_TREATMENT,
                         BinomialSummary(scenario.n_ct, y_ct)))
    meta = {
        "true_pi": rates.tolist(),
        "true_pi_cc": float(rates[k]),
        "true_pi_ct": float(pi_ct),
        "true_effect": float(pi_ct - rates[k]),
        "heterogeneous_ids": [f"H{j + 1}" for j in range(het_start, k)],
    }
    return Dataset("binomial", tuple(studies), meta=meta)


@dataclass(frozen=True)
class IpdScenario:
    scenario_id: int
    hypothesis: str = "null"
    n_historical: int = 5
    n_per_historical: int = 100
    n_per_arm: int = 60
    base_mean: float = 24.0
    shifted_mean: float = 30.0
    between_sd: float = 3.0

    def __post_init__(self):
        if self.scenario_id not in (1, 2, 3, 4):
            raise ValueError(f"IPD scenario_id must be 1..4, got {self.scenario_id}")
        if self.hypothesis not in ("null", "alternative"):
            raise ValueError(f"hypothesis must be null/alternative, got {self.hypothesis!r}")

    @property
    def n_heterogeneous(self) -> int:
        return {1: 0, 2: 0, 3: 1, 4: 2}[self.scenario_id]

    @property
    def treatment_effect(self) -> float:
        return 0.0 if self.hypothesis == "null" else IPD_ALT_EFFECT


def _ipd_rows(rng: RngStream, n: int, mu_age: float, pi_female: float,
              mu_base: float, gamma: float, treated: bool):
    age = rng.normal(mu_age, 8.0, size=n)
    sex = (rng.uniform(size=n) < pi_female).astype(float)
    base = rng.normal(mu_base, 8.0, size=n)
    eps = rng.normal(0.0, 1.0, size=n)
    trt = 1.0 if treated else 0.0
    y = 5.0 + 0.2 * (age - 50.0) + 1.0 * sex + 1.0 * base + gamma * trt + eps
    x = np.column_stack([np.ones(n), age, sex])
    t = np.full(n, trt)
    return IpdPayload(x, t, y), base


def generate_ipd_replicate(scenario: IpdScenario, rng: RngStream) -> Dataset:
    """Draw one IPD dataset: five historical controls plus a two-arm trial.

    Analysis covariates are (intercept, age, sex); the baseline score that
    drives the heterogeneity stays in ``dataset.meta`` only.
    """
    k = scenario.n_historical
    het_start = k - scenario.n_heterogeneous
    gamma = scenario.treatment_effect

    base_means = np.full(k + 1, scenario.base_mean)
    base_means[het_start:k] = scenario.shifted_mean
    if scenario.scenario_id == 2:
        base_means = rng.normal(scenario.base_mean, scenario.between_sd, size=k + 1)

    studies = []
    baselines = {}
    for j in range(k + 1):
        mu_age = float(rng.uniform(71.0, 77.0))
        pi_female = float(rng.uniform(0.5, 0.6))
        if j < k:
            payload, base_vals = _ipd_rows(
                rng, scenario.n_per_historical, mu_age, pi_female,
                float(base_means[j]), gamma, treated=False,
            )
            studies.append(Study(f"H{j + 1}", StudyRole.HISTORICAL, payload))
            baselines[f"H{j + 1}"] = base_vals.tolist()
        else:
            cc_payload, cc_base = _ipd_rows(
                rng, scenario.n_per_arm, mu_age, pi_female,
                float(base_means[j]), gamma, treated=False,
            )
            ct_payload, ct_base = _ipd_rows(
                rng, scenario.n_per_arm, mu_age, pi_female,
                float(base_means[j]), gamma, treated=True,
            )
            studies.append(Study("CC", StudyRole.CURRENT_CONTROL, cc_payload))
            studies.append(Study("CT", StudyRole.CURRENT_TREATMENT, ct_payload))
            baselines["CC"] = cc_base.tolist()
            baselines["CT"] = ct_base.tolist()

    meta = {
        "covariate_names": ["age", "sex"],
        "true_effect": float(gamma),
        "baseline_means": base_means.tolist(),
        "baseline_values": baselines,
        "heterogeneous_ids": [f"H{j + 1}" for j in range(het_start, k)],
    }
    return Dataset("ipd", tuple(studies), meta=meta)


@dataclass(frozen=True)
class MethodSettings:
    """Sampler settings shared by every replicate of a plan."""

    dpm: DpmConfig = DpmConfig()
    ddpm: DdpmConfig = DdpmConfig()
    conjugate_draws: int = 100_000
    gibbs_iters: int = 22_000
    gibbs_burn_in: int = 2_000


@dataclass(frozen=True)
class SimRun:
    outcome: str  # "binomial" | "ipd"
    scenario_id: int
    hypothesis: str
    methods: tuple = ("cd", "pd", "dpm", "ddpm")
    replicates: int = 1000

    def __post_init__(self):
        if self.outcome not in ("binomial", "ipd"):
            raise ValueError(f"outcome must be binomial/ipd, got {self.outcome!r}")
        unknown = [m for m in self.methods if m not in METHOD_CODES]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; implemented: {sorted(METHOD_CODES)}")
        if self.replicates <= 0:
            raise ValueError("replicates must be positive")
        # Instantiating validates the scenario id / hypothesis combination.
        self.scenario()

    def scenario(self):
        if self.outcome == "binomial":
            return BinomialScenario(self.scenario_id, self.hypothesis)
        return IpdScenario(self.scenario_id, self.hypothesis)

    @property
    def stream_tag(self) -> int:
        outcome_code = 1 if self.outcome == "binomial" else 2
        hyp_code = 0 if self.hypothesis == "null" else 1
        return outcome_code * 10_000 + self.scenario_id * 10 + hyp_code


@dataclass(frozen=True)
class SimPlan:
    runs: tuple

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(self.runs))
        if not self.runs:
            raise ValueError("plan has no runs")


@dataclass(frozen=True)
class MetricsCell:
    outcome: str
    scenario_id: int
    hypothesis: str
    method: str
    metric: str
    value: float
    mc_se: float
    n_replicates: int


@dataclass(frozen=True)
class MetricsTable:
    cells: tuple
    failures: tuple = ()

    def value(self, outcome: str, scenario_id: int, hypothesis: str,
              method: str, metric: str) -> float:
        for cell in self.cells:
            if (cell.outcome, cell.scenario_id, cell.hypothesis,
                    cell.method, cell.metric) == (outcome, scenario_id,
                                                  hypothesis, method, metric):
                return cell.value
        raise KeyError(f"no cell for {(outcome, scenario_id, hypothesis, method, metric)}")


@dataclass(frozen=True)
class ReplicateOutcome:
    """Per-method result of one replicate; effects on the raw scale."""

    post_mean: float
    post_sd: float
    ci_lo: float
    ci_hi: float
    reject: bool
    ehss: Optional[float] = None
    cocluster: Optional[float] = None


_BINOMIAL_RULE = DecisionRule("greater", 0.0, 0.975)
_IPD_RULE = DecisionRule("less", 0.0, 0.975)


def _apply_method(method: str, dataset: Dataset, rng: RngStream,
                  settings: MethodSettings) -> ReplicateOutcome:
    binomial = dataset.outcome_kind == "binomial"
    rule = _BINOMIAL_RULE if binomial else _IPD_RULE
    ehss = None
    cocluster = None
    if method in ("cd", "pd"):
        if binomial:
            fn = cd_binomial if method == "cd" else pd_binomial
            draws = fn(dataset, n_draws=settings.conjugate_draws, rng=rng)
            summary = summarize_draws(draws, rule)
        else:
            pooling = "current_only" if method == "cd" else "pooled"
            fit = linear_regression_gibbs(
                dataset, pooling=pooling, iters=settings.gibbs_iters,
                burn_in=settings.gibbs_burn_in, rng=rng,
            )
            summary = summarize_draws(fit.treatment_draws, rule)
    else:
        if method == "dpm":
            chain = run_dpm(dataset, settings.dpm, rng)
        else:
            chain = run_ddpm(dataset, settings.ddpm, rng)
        estimand = "binomial_diff" if binomial else "ipd_gamma"
        summary = effect_summary(chain, estimand, rule)
        cocluster = cluster_count_posterior(chain).mean_cocluster
        if binomial:
            ehss = ehss_moment_matched(chain)
    return ReplicateOutcome(
        post_mean=summary.mean,
        post_sd=summary.sd,
        ci_lo=summary.ci_lo,
        ci_hi=summary.ci_hi,
        reject=decide(summary),
        ehss=ehss,
        cocluster=cocluster,
    )


def _run_replicate(args):
    run, rep_index, master_seed, settings = args
    scenario = run.scenario()
    data_rng = RngStream(master_seed, derive_stream_id(run.stream_tag, rep_index, 0))
    if run.outcome == "binomial":
        dataset = generate_binomial_replicate(scenario, data_rng)
    else:
        dataset = generate_ipd_replicate(scenario, data_rng)
    truth = dataset.meta["true_effect"]

    results = {}
    error: Optional[str] = None
    for method in run.methods:
        method_rng = RngStream(
            master_seed, derive_stream_id(run.stream_tag, rep_index, METHOD_CODES[method])
        )
        try:
            results[method] = _apply_method(method, dataset, method_rng, settings)
        except (SamplerAbort, np.linalg.LinAlgError, ValueError) as exc:
            error = f"{method}: {type(exc).__name__}: {exc}"
            break
    return rep_index, truth, results, error


def _aggregate(run: SimRun, rows: list) -> list:
    """Reduce per-replicate results (already filtered to completed ones)."""
    percent = 100.0 if run.outcome == "binomial" else 1.0
    reject_name = "type_i_error" if run.hypothesis == "null" else "power"
    cells = []
    n = len(rows)
    for method in run.methods:
        outcomes = [results[method] for _, results in rows]
        truths = np.array([truth for truth, _ in rows])
        means = np.array([o.post_mean for o in outcomes])
        sds = np.array([o.post_sd for o in outcomes])
        errors = (means - truths) * percent
        covered = np.array(
            [(o.ci_lo <= t <= o.ci_hi) for o, t in zip(outcomes, truths)], dtype=float
        )
        rejects = np.array([o.reject for o in outcomes], dtype=float)

        sq = errors**2
        rmse = math.sqrt(sq.mean())
        metric_rows = [
            ("bias", errors.mean(), errors.std(ddof=1) / math.sqrt(n)),
            ("rmse", rmse,
             sq.std(ddof=1) / math.sqrt(n) / (2.0 * rmse) if rmse > 0 else 0.0),
            ("mean_post_sd", sds.mean() * percent,
             sds.std(ddof=1) * percent / math.sqrt(n)),
            ("coverage", covered.mean() * 100.0,
             100.0 * math.sqrt(covered.mean() * (1 - covered.mean()) / n)),
            (reject_name, rejects.mean() * 100.0,
             100.0 * math.sqrt(rejects.mean() * (1 - rejects.mean()) / n)),
        ]
        ehss_vals = [o.ehss for o in outcomes if o.ehss is not None]
        if ehss_vals:
            arr = np.array(ehss_vals)
            metric_rows.append(
                ("mean_ehss", arr.mean(), arr.std(ddof=1) / math.sqrt(len(arr)))
            )
        cocluster_vals = [o.cocluster for o in outcomes if o.cocluster is not None]
        if cocluster_vals:
            arr = np.array(cocluster_vals)
            metric_rows.append(
                ("mean_cocluster", arr.mean(), arr.std(ddof=1) / math.sqrt(len(arr)))
            )
        for metric, value, se in metric_rows:
            cells.append(MetricsCell(
                outcome=run.outcome,
                scenario_id=run.scenario_id,
                hypothesis=run.hypothesis,
                method=method,
                metric=metric,
                value=float(value),
                mc_se=float(se),
                n_replicates=n,
            ))
    return cells


def run_operating_characteristics(
    plan: SimPlan,
    master_seed: int,
    settings: Optional[MethodSettings] = None,
    threads: Optional[int] = None,
    per_replicate: bool = False,
):
    """Execute the plan and aggregate operating characteristics.

    Identical ``(plan, master_seed, settings)`` produce a bit-identical
    table regardless of ``threads``. With ``per_replicate`` the per-replicate
    method results are returned alongside the table (used for paired-method
    comparisons).
    """
    settings = settings if settings is not None else MethodSettings()
    if threads is None:
        threads = os.cpu_count() or 1

    all_cells: list = []
    failures: list = []
    detail: dict = {}
    for run in plan.runs:
        tasks = [(run, r, master_seed, settings) for r in range(run.replicates)]
        if threads > 1 and run.replicates > 1:
            with get_context("fork").Pool(threads) as pool:
                raw = pool.map(_run_replicate, tasks, chunksize=4)
        else:
            raw = [_run_replicate(t) for t in tasks]
        raw.sort(key=lambda item: item[0])

        completed = []
        for rep_index, truth, results, error in raw:
            if error is not None:
                failures.append((run.outcome, run.scenario_id, run.hypothesis,
                                 rep_index, error))
            else:
                completed.append((truth, results))
        if not completed:
            raise SamplerAbort(
                f"every replicate failed for {run.outcome} scenario {run.scenario_id}"
            )
        all_cells.extend(_aggregate(run, completed))
        if per_replicate:
            detail[(run.outcome, run.scenario_id, run.hypothesis)] = completed

    table = MetricsTable(tuple(all_cells), tuple(failures))
    if per_replicate:
        return table, detail
    return table
