"""Command-line interface: validate datasets, analyze them, run simulations.

Commands::

    dpborrow validate <data>
    dpborrow analyze <data> --config cfg.json --methods cd,pd,dpm,ddpm --seed N --out DIR
    dpborrow simulate --plan plan.json --seed N --out DIR --threads T

Data files ending in ``.csv`` are read as individual participant data; all
others as binomial-summary JSON. Config files are JSON; command-line flags
override config fields of the same name. Exit codes: 0 success, 2 on parse,
validation, or config errors, 3 when a sampler aborts.

Outputs are written once, after a deterministic reduction, so repeated runs
with the same seed are byte-identical (the manifest, which records wall
clock, is the one exception).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .conjugate import (
    BetaPosterior,
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
    ValidationError,
    parse_ipd_dataset,
    parse_summary_dataset,
)
from .ddpm import DdpmConfig, run_ddpm
from .dpm import ConfigError, DpmConfig, SamplerAbort, run_dpm
from .manifest import RunManifest, config_digest
from .posterior import (
    DecisionRule,
    cluster_count_posterior,
    decide,
    effect_summary,
    ehss_moment_matched,
    sbi,
    summarize_draws,
)
from .rng import Gamma, RngStream
from .simulate import METHOD_CODES, MethodSettings, SimPlan, SimRun, run_operating_characteristics

_INPUT_ERRORS = (SchemaError, ValidationError, ConfigError, MissingArm, ValueError, KeyError)


def _load_dataset(path: str, args) -> Dataset:
    text = Path(path).read_text()
    if path.endswith(".csv"):
        covariates = [c for c in (args.covariates or "").split(",") if c]
        columns = IpdColumns(
            study=args.study_col,
            arm=args.arm_col,
            outcome=args.outcome_col,
            covariates=covariates,
            current_study=args.current_study,
        )
        return parse_ipd_dataset(text, columns)
    return parse_summary_dataset(text)


def _add_dataset_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", help="dataset path (.json summary or .csv IPD)")
    parser.add_argument("--study-col", default="study")
    parser.add_argument("--arm-col", default="arm")
    parser.add_argument("--outcome-col", default="outcome")
    parser.add_argument("--covariates", default="", help="comma-separated covariate columns")
    parser.add_argument("--current-study", default=None)


def _merge_config(path: Optional[str], args) -> dict:
    cfg = {}
    if path:
        cfg = json.loads(Path(path).read_text())
        if not isinstance(cfg, dict):
            raise SchemaError("config file must hold a JSON object")
    for key in ("iters", "burn_in", "thin"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _beta_pair(cfg: dict, key: str, default) -> BetaPosterior:
    raw = cfg.get(key)
    if raw is None:
        return default
    return BetaPosterior(float(raw[0]), float(raw[1]))


def _sampler_configs(cfg: dict):
    common = dict(
        iters=int(cfg.get("iters", 22_000)),
        burn_in=int(cfg.get("burn_in", 2_000)),
        thin=int(cfg.get("thin", 1)),
        base_beta=_beta_pair(cfg, "base_beta", BetaPosterior(0.5, 0.5)),
        ct_prior=_beta_pair(cfg, "ct_prior", BetaPosterior(0.5, 0.5)),
        coef_prior_sd=float(cfg.get("coef_prior_sd", 1000.0)),
        trt_prior_sd=float(cfg.get("trt_prior_sd", 1000.0)),
        sigma2_prior=tuple(cfg.get("sigma2_prior", (0.01, 0.01))),
        init=cfg.get("init", "auto"),
        m_update=cfg.get("m_update", "stick_conditional"),
        max_components=int(cfg.get("max_components", 512)),
    )
    if cfg.get("fix_m") is not None:
        common["fix_m"] = float(cfg["fix_m"])
    m_prior = cfg.get("m_prior", {})
    common["m_prior"] = Gamma(
        float(m_prior.get("shape", 1.0)), float(m_prior.get("scale", 1.0))
    )
    dpm = DpmConfig(**common)
    ddpm_extra = dict(
        phi_prior=_beta_pair(cfg, "phi_prior", BetaPosterior(2.0, 2.0)),
        phi_update=cfg.get("phi_update", "conjugate_indicator"),
        mh_proposal_sd=float(cfg.get("mh_proposal_sd", 0.1)),
    )
    if cfg.get("fix_phi") is not None:
        ddpm_extra["fix_phi"] = float(cfg["fix_phi"])
    ddpm = DdpmConfig(**common, **ddpm_extra)
    return dpm, ddpm


def _decision_rule(cfg: dict, outcome_kind: str) -> DecisionRule:
    raw = cfg.get("decision", {})
    default_direction = "greater" if outcome_kind == "binomial" else "less"
    return DecisionRule(
        direction=raw.get("direction", default_direction),
        margin=float(raw.get("margin", 0.0)),
        threshold=float(raw.get("threshold", 0.975)),
    )


def cmd_validate(args) -> int:
    try:
        dataset = _load_dataset(args.data, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    k = dataset.n_historical
    n_ct = 1 if dataset.current_treatment is not None else 0
    print(f"{k} historical, 1 current control, {n_ct} current treatment")
    if dataset.outcome_kind == "binomial":
        for s in dataset.studies:
            rate = 100.0 * s.payload.rate
            print(f"  {s.id:>12} {s.role.value:<18} n={s.payload.n:<5} "
                  f"responses={s.payload.responses:<5} rate={rate:.1f}%")
    else:
        for s in dataset.studies:
            y = s.payload.outcome
            print(f"  {s.id:>12} {s.role.value:<18} n={s.payload.n:<5} "
                  f"outcome mean={y.mean():.2f} sd={y.std(ddof=1):.2f}")
        x = np.vstack([s.payload.covariates for s in dataset.studies])
        for j in range(1, x.shape[1]):
            col = x[:, j]
            if np.all(col == col[0]):
                print(f"warning: covariate column {j} is constant (collinearity risk)")
    return 0


def _percent(value: float) -> str:
    return f"{100.0 * value:.1f}"


def _analyze_one(method: str, dataset: Dataset, cfg: dict, rule: DecisionRule,
                 rng: RngStream):
    binomial = dataset.outcome_kind == "binomial"
    dpm_cfg, ddpm_cfg = _sampler_configs(cfg)
    chain = None
    if method in ("cd", "pd"):
        if binomial:
            fn = cd_binomial if method == "cd" else pd_binomial
            draws = fn(dataset, n_draws=int(cfg.get("conjugate_draws", 100_000)), rng=rng)
        else:
            fit = linear_regression_gibbs(
                dataset,
                pooling="current_only" if method == "cd" else "pooled",
                iters=int(cfg.get("gibbs_iters", cfg.get("iters", 22_000))),
                burn_in=int(cfg.get("gibbs_burn_in", cfg.get("burn_in", 2_000))),
                rng=rng,
            )
            draws = fit.treatment_draws
        summary = summarize_draws(draws, rule)
    else:
        chain = run_dpm(dataset, dpm_cfg, rng) if method == "dpm" else \
            run_ddpm(dataset, ddpm_cfg, rng)
        estimand = "binomial_diff" if binomial else "ipd_gamma"
        summary = effect_summary(chain, estimand, rule)

    result = {
        "method": method,
        "mean": summary.mean,
        "sd": summary.sd,
        "ci_lo": summary.ci_lo,
        "ci_hi": summary.ci_hi,
        "tail_prob": summary.tail_prob,
        "decision": decide(summary),
        "ehss": None,
        "sbi": None,
        "mean_cocluster": None,
    }
    if chain is not None:
        result["sbi"] = sbi(chain)
        result["mean_cocluster"] = cluster_count_posterior(chain).mean_cocluster
        if binomial:
            result["ehss"] = ehss_moment_matched(chain)
    return result


def cmd_analyze(args) -> int:
    started = time.time()
    try:
        dataset = _load_dataset(args.data, args)
        cfg = _merge_config(args.config, args)
        methods = [m for m in args.methods.split(",") if m]
        unknown = [m for m in methods if m not in METHOD_CODES]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}")
        rule = _decision_rule(cfg, dataset.outcome_kind)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    master = RngStream(args.seed)
    try:
        results = [
            _analyze_one(m, dataset, cfg, rule, master.substream(METHOD_CODES[m]))
            for m in methods
        ]
    except SamplerAbort as exc:
        print(f"sampler abort: {exc}", file=sys.stderr)
        return 3
    except (RankDeficient, MissingArm) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    binomial = dataset.outcome_kind == "binomial"

    lines = ["method,mean,sd,ci_lo,ci_hi,decision,ehss"]
    for r in results:
        if binomial:
            fields = [_percent(r["mean"]), _percent(r["sd"]),
                      _percent(r["ci_lo"]), _percent(r["ci_hi"])]
        else:
            fields = [f"{r[k]:.3f}" for k in ("mean", "sd", "ci_lo", "ci_hi")]
        ehss = "" if r["ehss"] is None else f"{r['ehss']:.1f}"
        lines.append(f"{r['method']},{','.join(fields)},{str(r['decision']).lower()},{ehss}")
    (out / "summary.csv").write_text("\n".join(lines) + "\n")

    sbi_lines = ["method,study,sbi"]
    for r in results:
        if r["sbi"] is None:
            continue
        for study, value in r["sbi"].items():
            sbi_lines.append(f"{r['method']},{study},{_percent(value)}")
    (out / "sbi.csv").write_text("\n".join(sbi_lines) + "\n")

    (out / "results.json").write_text(json.dumps(results, indent=2, sort_keys=True))

    manifest = RunManifest(
        command="analyze",
        config_digest=config_digest({"config": cfg, "methods": methods}),
        master_seed=args.seed,
        software_version=__version__,
        wall_clock_s=time.time() - started,
        method_iters={
            m: int(cfg.get("iters", 22_000)) if m in ("dpm", "ddpm")
            else int(cfg.get("conjugate_draws", 100_000)) if binomial
            else int(cfg.get("gibbs_iters", cfg.get("iters", 22_000)))
            for m in methods
        },
    )
    (out / "manifest.json").write_text(manifest.to_json())
    print(f"wrote {out}/summary.csv, sbi.csv, results.json, manifest.json")
    return 0


def _plan_from_json(doc: dict) -> SimPlan:
    runs = []
    for raw in doc.get("runs", []):
        runs.append(SimRun(
            outcome=raw.get("outcome", "binomial"),
            scenario_id=int(raw["scenario"]),
            hypothesis=raw.get("hypothesis", "null"),
            methods=tuple(raw.get("methods", ("cd", "pd", "dpm", "ddpm"))),
            replicates=int(raw.get("replicates", 1000)),
        ))
    return SimPlan(tuple(runs))


def cmd_simulate(args) -> int:
    started = time.time()
    try:
        doc = json.loads(Path(args.plan).read_text())
        plan = _plan_from_json(doc)
        cfg = doc.get("settings", {})
        dpm_cfg, ddpm_cfg = _sampler_configs(cfg)
        settings = MethodSettings(
            dpm=dpm_cfg,
            ddpm=ddpm_cfg,
            conjugate_draws=int(cfg.get("conjugate_draws", 100_000)),
            gibbs_iters=int(cfg.get("gibbs_iters", cfg.get("iters", 22_000))),
            gibbs_burn_in=int(cfg.get("gibbs_burn_in", cfg.get("burn_in", 2_000))),
        )
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (json.JSONDecodeError, *_INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        table = run_operating_characteristics(
            plan, master_seed=args.seed, settings=settings, threads=args.threads
        )
    except SamplerAbort as exc:
        print(f"sampler abort: {exc}", file=sys.stderr)
        return 3

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    lines = ["outcome,scenario,hypothesis,method,metric,value,mc_se,n_replicates"]
    for c in table.cells:
        lines.append(
            f"{c.outcome},{c.scenario_id},{c.hypothesis},{c.method},{c.metric},"
            f"{c.value:.4f},{c.mc_se:.4f},{c.n_replicates}"
        )
    (out / "oc.csv").write_text("\n".join(lines) + "\n")

    doc_out = {
        "cells": [c.__dict__ for c in table.cells],
        "failures": [
            {"outcome": f[0], "scenario": f[1], "hypothesis": f[2],
             "replicate": f[3], "error": f[4]}
            for f in table.failures
        ],
    }
    (out / "oc.json").write_text(json.dumps(doc_out, indent=2, sort_keys=True))
    if table.failures:
        flines = ["outcome,scenario,hypothesis,replicate,error"]
        for f in table.failures:
            flines.append(f"{f[0]},{f[1]},{f[2]},{f[3]},\"{f[4]}\"")
        (out / "failures.csv").write_text("\n".join(flines) + "\n")

    manifest = RunManifest(
        command="simulate",
        config_digest=config_digest({"plan": doc}),
        master_seed=args.seed,
        software_version=__version__,
        wall_clock_s=time.time() - started,
        method_iters={"dpm": settings.dpm.iters, "ddpm": settings.ddpm.iters,
                      "gibbs": settings.gibbs_iters,
                      "conjugate_draws": settings.conjugate_draws},
    )
    (out / "manifest.json").write_text(manifest.to_json())
    n_fail = len(table.failures)
    print(f"wrote {out}/oc.csv ({len(table.cells)} cells, {n_fail} failed replicates)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpborrow",
        description="Historical-control borrowing via DP-mixture clustering",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="validate a dataset and print a summary")
    _add_dataset_args(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_an = sub.add_parser("analyze", help="run borrowing analyses on one dataset")
    _add_dataset_args(p_an)
    p_an.add_argument("--config", default=None, help="JSON config path")
    p_an.add_argument("--methods", default="cd,pd,dpm,ddpm")
    p_an.add_argument("--seed", type=int, default=0)
    p_an.add_argument("--out", required=True)
    p_an.add_argument("--iters", type=int, default=None)
    p_an.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p_an.add_argument("--thin", type=int, default=None)
    p_an.set_defaults(func=cmd_analyze)

    p_sim = sub.add_parser("simulate", help="run operating-characteristic replications")
    p_sim.add_argument("--plan", required=True, help="JSON plan path")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--threads", type=int, default=None,
                       help="worker pool size (default: available parallelism)")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
