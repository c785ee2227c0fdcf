"""Checking the sampler against closed-form partition laws.

With the likelihood switched off, the clustering model's draws must follow
its prior partition law. For a Dirichlet process with fixed concentration M
on three units, the Chinese-restaurant formulas give

    Pr(all together) = 2 / ((1 + M)(2 + M))
    Pr(all apart)    = M^2 / ((1 + M)(2 + M))

This demo runs the prior-only chain at a few values of M and compares.
The same idea powers the test suite's distribution-level oracles.

Run:  python3 demos/prior_partitions.py   (about a minute)
"""

import numpy as np

from dpborrow import DpmConfig, RngStream, run_dpm
from dpborrow.data import BinomialSummary, Dataset, Study, StudyRole


def pseudo_dataset():
    # three placeholder studies; values are ignored when the likelihood is off
    return Dataset("binomial", (
        Study("A", StudyRole.HISTORICAL, BinomialSummary(10, 5)),
        Study("B", StudyRole.HISTORICAL, BinomialSummary(10, 5)),
        Study("CC", StudyRole.CURRENT_CONTROL, BinomialSummary(10, 5)),
    ))


def main():
    ds = pseudo_dataset()
    print(f"{'M':>5}{'together (chain)':>18}{'together (exact)':>18}"
          f"{'apart (chain)':>15}{'apart (exact)':>15}")
    for m in (0.5, 1.0, 2.0):
        config = DpmConfig(iters=40_000, burn_in=2_000, prior_only=True, fix_m=m)
        chain = run_dpm(ds, config, RngStream(7, int(10 * m)))
        z = chain.z
        together = np.mean((z[:, 0] == z[:, 1]) & (z[:, 1] == z[:, 2]))
        apart = np.mean(
            (z[:, 0] != z[:, 1]) & (z[:, 0] != z[:, 2]) & (z[:, 1] != z[:, 2])
        )
        denom = (1 + m) * (2 + m)
        print(f"{m:5.1f}{together:18.4f}{2 / denom:18.4f}"
              f"{apart:15.4f}{m * m / denom:15.4f}")

    # The partition law is what makes the concentration parameter
    # interpretable: larger M pushes mass toward finer partitions, and its
    # posterior adapts the degree of borrowing to the observed agreement.


if __name__ == "__main__":
    main()
