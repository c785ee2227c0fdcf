"""Frequentist operating characteristics of the borrowing analyses.

The simulation harness replays a scenario many times: draw a dataset, run
every configured method on it, score the posterior against the known truth,
and aggregate bias, RMSE, coverage, and the type I error or power of the
posterior-probability decision rule.

The scenario used here plants four heterogeneous historical controls (20%
response rate) among four homogeneous ones (50%, matching the current
control): naive pooling inflates the type I error severalfold while the
clustering analyses stay near the nominal level.

This demo runs a deliberately small desk version (60 replicates, shortened
chains) so it finishes in a few minutes; the full-scale plan is a JSON file
away (see README) and is what the acceptance suite reproduces.

Run:  python3 demos/operating_characteristics.py
"""

from dpborrow import DdpmConfig, DpmConfig
from dpborrow.simulate import (
    MethodSettings,
    SimPlan,
    SimRun,
    run_operating_characteristics,
)


def main():
    settings = MethodSettings(
        dpm=DpmConfig(iters=4000, burn_in=1000),
        ddpm=DdpmConfig(iters=4000, burn_in=1000),
        conjugate_draws=50_000,
    )
    plan = SimPlan((
        SimRun("binomial", 4, "null",
               methods=("cd", "pd", "dpm", "ddpm"), replicates=60),
    ))
    table = run_operating_characteristics(plan, master_seed=2024,
                                          settings=settings, threads=2)

    print("scenario 4 (four conflicting historical controls), null hypothesis")
    print(f"{'method':<8}{'type I %':>10}{'bias pts':>10}{'coverage %':>12}{'EHSS':>8}")
    for method in ("cd", "pd", "dpm", "ddpm"):
        type_i = table.value("binomial", 4, "null", method, "type_i_error")
        bias = table.value("binomial", 4, "null", method, "bias")
        coverage = table.value("binomial", 4, "null", method, "coverage")
        try:
            ehss = f"{table.value('binomial', 4, 'null', method, 'mean_ehss'):8.0f}"
        except KeyError:
            ehss = " " * 8
        print(f"{method:<8}{type_i:10.1f}{bias:10.2f}{coverage:12.1f}{ehss}")

    print("\nAt 60 replicates the Monte Carlo error is a few points; the "
          "pattern (pooling breaks, clustering holds) is already visible.")


if __name__ == "__main__":
    main()
