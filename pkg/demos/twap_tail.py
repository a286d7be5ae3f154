"""
Guaranteed liquidation ends like TWAP
=====================================

With a very large terminal penalty the optimal speed approaches Q/(T - t)
near the horizon. Run a noise-free path and watch the gap shrink linearly.
"""
import numpy as np

from cointexec import (MarketModel, OrderFlowModel, SimConfig, StrategySpec, build_strategy,
                       run_strategy, simulate_paths)

kappa = np.array([[1.5, -0.8, 0.3], [-0.6, 1.2, -0.4], [0.2, -0.5, 0.9]])
model = MarketModel(kappa=kappa, theta=[10.0, 20.0, 15.0], sigma_cov=np.zeros((3, 3)),
                    a_temp=0.01 * np.eye(2))
cfg = SimConfig(path_count=1, q0=(100.0, 50.0), step_count=20000, horizon=1.0, alpha=1e8,
                grid_refine=1, z0=(0.5, -0.3, 0.2))
strat = build_strategy(StrategySpec("UL", 0.01, 1e8 * np.eye(2)), model, cfg.q0, 1.0,
                       cfg.grid_steps)
chunk = simulate_paths(model, OrderFlowModel.zero_flow(3), cfg).materialize()
tr = run_strategy(chunk, strat, model, cfg, record=True).trajectories

print("terminal inventory:", tr["Q"][0, -1])
for k in (19800, 19900, 19980, 19998):
    tau = 1.0 - tr["t"][k]
    gap = tr["nu"][0, k] - tr["Q"][0, k] / tau
    print("tau = %.4f   nu - Q/tau = %s" % (tau, np.array2string(gap, precision=5)))
