"""
Optimal liquidation coefficients for the bundled Nasdaq model
=============================================================

Solve the Riccati system for INTC and SMH with three additional
co-integrated assets and look at the speed the strategy starts with.
"""
import numpy as np

from cointexec import PenaltySpec, StrategySpec, build_strategy, nasdaq_model
from cointexec.riccati import build_problem, solve_riccati

model, sigma_ac = nasdaq_model()
print("assets:", model.labels, " traded:", model.labels[:model.m])

# one hour of a 6.5 hour day, guaranteed liquidation
T = 1 / 6.5
pen = PenaltySpec.isotropic(1e-3, 1e6, model.m)
sol = solve_riccati(build_problem(model, pen, T))
print("C(0) =\n", sol.C[0])
print("largest |G| on the grid: %.3g" % np.abs(sol.G).max())

# starting speeds (shares per unit of model time) at the mean and after a shock
q0 = np.array([4600.0, 900.0])
ul = build_strategy(StrategySpec("UL", 1e-3, 1e6 * np.eye(2)), model, q0, T)
ac = build_strategy(StrategySpec("AC", 1e-3, 1e6 * np.eye(2)), model, q0, T, sigma_ac=sigma_ac)
z = np.zeros(model.n)
print("UL at the mean:", ul.speed(0.0, z, q0))
print("AC            :", ac.speed(0.0, z[:2], q0))
z[1] = 0.05  # SMH five cents rich against the basket
print("UL, SMH rich  :", ul.speed(0.0, z, q0))
