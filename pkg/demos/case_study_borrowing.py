"""Borrowing historical controls in a small phase II trial.

The bundled dataset is a proof-of-concept trial in ankylosing spondylitis:
a tiny current trial (6 placebo, 23 treated, binary response) alongside
eight historical placebo arms totalling 513 participants. We compare four
analyses of the treatment effect pi_CT - pi_CC:

  cd    current data only (conjugate beta-binomial)
  pd    naive pooling of all control arms
  dpm   Dirichlet-process clustering of controls (dynamic borrowing)
  ddpm  dependent variant with arm-type-specific stick weights

The modified dataset raises study 3's responses from 19 to 31 (a 60.8%
response rate against ~25% elsewhere), planting a conflicting historical
control to show how the clustering analyses isolate it.

Run:  python3 demos/case_study_borrowing.py   (about a minute)
"""

from pathlib import Path

from dpborrow import (
    DdpmConfig,
    DpmConfig,
    RngStream,
    cd_binomial,
    effect_summary,
    ehss_moment_matched,
    parse_summary_dataset,
    pd_binomial,
    run_ddpm,
    run_dpm,
)
from dpborrow.posterior import summarize_draws, DEFAULT_RULES

DATA = Path(__file__).parent / "data"


def analyze(dataset, seed):
    """All four methods on one dataset; returns {method: (summary, ehss)}."""
    master = RngStream(seed)
    rule = DEFAULT_RULES["binomial_diff"]
    out = {}
    out["cd"] = summarize_draws(cd_binomial(dataset, rng=master.substream(1)), rule), None
    out["pd"] = summarize_draws(pd_binomial(dataset, rng=master.substream(2)), rule), None

    dpm_chain = run_dpm(dataset, DpmConfig(), master.substream(3))
    out["dpm"] = effect_summary(dpm_chain, "binomial_diff"), ehss_moment_matched(dpm_chain)
    ddpm_chain = run_ddpm(dataset, DdpmConfig(), master.substream(4))
    out["ddpm"] = effect_summary(ddpm_chain, "binomial_diff"), ehss_moment_matched(ddpm_chain)
    return out


def show(title, results):
    print(f"\n{title}")
    print(f"{'method':<8}{'mean':>7}{'sd':>7}{'95% interval':>18}{'EHSS':>8}")
    for method, (s, ehss) in results.items():
        ci = f"({100 * s.ci_lo:5.1f}, {100 * s.ci_hi:5.1f})"
        ehss_txt = f"{ehss:8.1f}" if ehss is not None else " " * 8
        print(f"{method:<8}{100 * s.mean:7.1f}{100 * s.sd:7.1f}{ci:>18}{ehss_txt}")


def main():
    original = parse_summary_dataset((DATA / "as_trial.json").read_text())
    modified = parse_summary_dataset((DATA / "as_trial_modified.json").read_text())

    # 1. Original data: the historical controls agree with the current one,
    #    so the clustering analyses recover most of the pooled precision
    #    while the current-data-only analysis is very wide.
    show("original trial (treatment effect, %)", analyze(original, seed=20))

    # 2. With the planted conflict, pooling drags the estimate while the
    #    clustering analyses shed the conflicting study: their effective
    #    historical sample size drops, the estimate barely moves.
    show("modified trial with one conflicting control (%)", analyze(modified, seed=21))

    # The moment-matched effective historical sample size reported above is
    # a diagnostic: it reads the width of the control posterior as if it
    # were a single beta distribution, so strongly bimodal posteriors
    # (borrow / don't borrow) compress it.


if __name__ == "__main__":
    main()
