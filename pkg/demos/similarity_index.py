"""The similarity-and-borrowing index (SBI).

Clustering the control arms yields, for every historical study, the
posterior probability that it shares a cluster with the current control:
Pr(z_CC = z_Hk | data). That is simultaneously a similarity measure and a
direct reading of "how much of this study is being borrowed" - a quantity
meta-analytic borrowing methods cannot produce.

Run:  python3 demos/similarity_index.py   (about a minute)
"""

from pathlib import Path

from dpborrow import (
    DdpmConfig,
    DpmConfig,
    RngStream,
    parse_summary_dataset,
    run_ddpm,
    run_dpm,
    sbi,
)

DATA = Path(__file__).parent / "data"


def sbi_rows(dataset, seed):
    dpm_chain = run_dpm(dataset, DpmConfig(), RngStream(seed, 1))
    ddpm_chain = run_ddpm(dataset, DdpmConfig(), RngStream(seed, 2))
    return sbi(dpm_chain), sbi(ddpm_chain)


def show(title, dataset, rows):
    print(f"\n{title}")
    rates = {s.id: 100 * s.payload.rate for s in dataset.historical}
    print(f"{'study':<7}{'rate %':>8}{'SBI dpm %':>11}{'SBI ddpm %':>12}")
    dpm_row, ddpm_row = rows
    for sid in dpm_row:
        print(f"{sid:<7}{rates[sid]:8.1f}{100 * dpm_row[sid]:11.1f}{100 * ddpm_row[sid]:12.1f}")


def main():
    original = parse_summary_dataset((DATA / "as_trial.json").read_text())
    modified = parse_summary_dataset((DATA / "as_trial_modified.json").read_text())

    # 1. Original data: all eight historical rates sit near the pooled 25%,
    #    so each co-clusters with the current control most of the time.
    #    Study 7 (11.5%) is the least similar and earns a visibly lower
    #    index - partial borrowing, not an all-or-nothing call.
    show("original trial", original, sbi_rows(original, seed=30))

    # 2. The modified study 3 (60.8%) is flagged almost surely irrelevant:
    #    its index collapses to a couple of percent while the others drop
    #    only slightly (one fewer ally in the shared cluster).
    show("modified trial (study 3 now conflicts)", modified, sbi_rows(modified, seed=31))


if __name__ == "__main__":
    main()
