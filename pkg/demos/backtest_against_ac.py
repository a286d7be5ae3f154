"""
Monte Carlo comparison with Almgren-Chriss
===========================================

Liquidate 4600 INTC and 900 SMH over one hour with one-second trades and
compare the unrestricted (UL) and clipped (RL) strategies against the AC
benchmark on common price paths. Savings are in basis points of AC wealth.

A few hundred paths run in under a minute; use 10000 for stable quantiles.
"""
import sys

from cointexec import OrderFlowModel, SimConfig, compare_strategies, nasdaq_model

paths = int(sys.argv[1]) if len(sys.argv) > 1 else 500
model, sigma_ac = nasdaq_model()
cfg = SimConfig(path_count=paths, q0=(4600.0, 900.0), rng_seed=1)
run = compare_strategies(model, OrderFlowModel.zero_flow(model.n), cfg, ["UL", "RL"],
                         [1e-3, 1e-2], sigma_ac=sigma_ac)

print("%-8s %-4s %10s %10s %10s %8s %12s" % ("phi", "kind", "q05", "median", "q95",
                                             "under%", "SMH neg%"))
for row in run.summary():
    print("%-8g %-4s %10.3f %10.3f %10.3f %8.2f %12.1f" % (
        row["phi"], row["strategy"], row["savings_q05"], row["savings_q50"],
        row["savings_q95"], row["underperform_pct"], row["repurchase_paths_pct_1"]))
