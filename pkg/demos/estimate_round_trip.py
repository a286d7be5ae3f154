"""
Fitting the price model back from simulated minute bars
========================================================

Simulate a long minute-sampled path of the bundled model, fit the VAR(1)
and compare the continuous-time estimates with the truth.
"""
import numpy as np

from cointexec import OrderFlowModel, SimConfig, nasdaq_model, simulate_paths
from cointexec.estimation import MidpriceSeries, cointegration_weights, fit_var

model, _ = nasdaq_model()
N, dt, sub = 10000, 1 / 390, 20
cfg = SimConfig(path_count=1, q0=(1.0, 1.0), step_count=N * sub, horizon=N * dt, rng_seed=3)
Z = simulate_paths(model, OrderFlowModel.zero_flow(5), cfg, record_every=sub).materialize().Z[0]

fit = fit_var(MidpriceSeries(np.arange(N + 1) * dt, Z + model.theta, model.labels))
print("trace statistics:", np.round(fit.trace_stats, 2))
print("5% critical     :", fit.trace_crit)
print("selected rank   :", fit.rank)
print("kappa t-stats against the truth:")
print(np.round((fit.kappa - model.kappa) / fit.kappa_stderr, 2))
print("Sigma relative error: %.3f" % (np.linalg.norm(fit.sigma - model.sigma_cov)
                                      / np.linalg.norm(model.sigma_cov)))
print("co-integration weights:", np.round(cointegration_weights(fit), 3))
