"""Trading speeds for the optimal strategy and its variants.

Kinds
-----
UL          unrestricted optimal liquidation, repurchases allowed
RL          UL clipped to nonnegative speeds, stops once an inventory is flat
ULT         UL with the Almgren-Chriss inventory path as running target
AC          multi-asset Almgren-Chriss benchmark (no co-integration)
SeriesTail  UL that switches to the near-terminal series form for tau < tau_switch
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import InventoryTarget, MarketModel, OrderFlowModel, PenaltySpec, validate_model
from .riccati import (AsymptoticCoefficients, RiccatiSolution, asymptotic_coefficients,
                      build_problem, solve_riccati)
from .value_terms import ValueTerms, ac_target_schedule, compute_value_terms

KINDS = ("UL", "RL", "ULT", "AC", "SeriesTail")


@dataclass(frozen=True)
class StrategySpec:
    """Which strategy to run and with what penalties.

    Parameters
    ----------
    kind : str
        One of ``UL, RL, ULT, AC, SeriesTail``.
    phi : float
        Running inventory penalty.
    alpha_term : (m, m) array
        Terminal penalty.
    target : InventoryTarget, optional
        Running target; ULT builds the AC schedule when omitted, others use zero.
    phi_ac : float
        Penalty of the AC schedule used as the ULT target.
    tau_switch : float
        SeriesTail switch point as a fraction of the horizon.
    """

    kind: str
    phi: float
    alpha_term: np.ndarray
    target: Optional[InventoryTarget] = None
    phi_ac: float = 0.1
    tau_switch: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")

    @property
    def label(self) -> str:
        return self.kind

    @property
    def penalty(self) -> PenaltySpec:
        return PenaltySpec(self.phi, self.alpha_term)


def optimal_speed(riccati: RiccatiSolution, terms: ValueTerms, t: float, s, q, mu=None) -> np.ndarray:
    """Optimal liquidation speed ``-1/2 a^{-1} (2 C q + (E^T - X)(s - theta) + D(t, mu))``.

    Positive entries sell. ``s``, ``q`` and ``mu`` may carry a leading batch axis.
    """
    model = riccati.problem.model
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    z = s - model.theta
    A, C, E = riccati.coefficients(t)
    Et = E - model.selection.T
    D0 = riccati.interpolate(terms.D0, t)
    inner = q @ (2.0 * C).T + z @ Et + D0
    if mu is not None:
        inner = inner + np.asarray(mu, dtype=float) @ riccati.interpolate(terms.D1, t).T
    return -0.5 * inner @ np.linalg.inv(model.a_temp).T


def clipped_speed(raw, q) -> np.ndarray:
    """Componentwise ``max(raw, 0)``, and zero for components whose inventory is flat."""
    raw = np.asarray(raw, dtype=float)
    q = np.asarray(q, dtype=float)
    return np.where(q > 0, np.maximum(raw, 0.0), 0.0)


def series_tail_speed(q, tau: float, z, mu, coeffs: AsymptoticCoefficients) -> np.ndarray:
    """Near-terminal speed from the series expansion in ``tau = T - t``.

    ``nu = -a^{-1} C_{-1} q / tau - a^{-1} C_0 q - tau/2 a^{-1} (E_1^T z + X b_bar mu)``.
    The leading term is TWAP on the remaining inventory when ``C_{-1} = -a``.

    Raises
    ------
    ValueError
        If ``tau <= 0``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    q = np.asarray(q, dtype=float)
    z = np.asarray(z, dtype=float)
    a_inv = np.linalg.inv(coeffs.a_temp)
    inner = q @ (coeffs.C_m1 / tau + coeffs.C0).T * 2.0 + tau * (z @ coeffs.E1)
    if mu is not None:
        inner = inner + tau * (np.asarray(mu, dtype=float) @ coeffs.xb_bar.T)
    return -0.5 * inner @ a_inv.T


class SolvedStrategy:
    """A strategy with its Riccati and value terms solved on a grid.

    Speeds are affine in the state,
    ``nu = Kq q + Kz z + k0 + Kmu mu``, and :meth:`gains` returns these
    coefficient arrays at requested times for vectorized simulation.
    """

    def __init__(self, spec: StrategySpec, model: MarketModel, riccati: RiccatiSolution,
                 terms: ValueTerms, target: InventoryTarget):
        self.spec = spec
        self.model = model
        self.riccati = riccati
        self.terms = terms
        self.target = target
        self.coeffs = asymptotic_coefficients(model, spec.penalty)

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def horizon(self) -> float:
        return self.riccati.horizon

    def gains(self, times):
        """Speed coefficients ``(Kq, Kz, k0, Kmu)`` at each time in ``times``."""
        model = self.model
        a_inv = np.linalg.inv(model.a_temp)
        X = model.selection
        r = self.riccati
        Kq, Kz, k0, Kmu = [], [], [], []
        for t in times:
            _, C, E = r.coefficients(t)
            Kq.append(-a_inv @ C)
            Kz.append(-0.5 * a_inv @ (E - X.T).T)
            k0.append(-0.5 * a_inv @ r.interpolate(self.terms.D0, t))
            Kmu.append(-0.5 * a_inv @ r.interpolate(self.terms.D1, t))
        return np.array(Kq), np.array(Kz), np.array(k0), np.array(Kmu)

    def speed(self, t: float, z, q, mu=None) -> np.ndarray:
        """Strategy speed at one time for a batch of states (no RL latch)."""
        z = np.asarray(z, dtype=float)
        if self.kind == "SeriesTail" and self.horizon - t < self.spec.tau_switch * self.horizon:
            return series_tail_speed(q, self.horizon - t, z, mu, self.coeffs)
        nu = optimal_speed(self.riccati, self.terms, t, z + self.model.theta, q, mu)
        if self.kind == "RL":
            nu = clipped_speed(nu, q)
        return nu


def build_strategy(spec: StrategySpec, model: MarketModel, q0, horizon: float,
                   grid_steps: int = 20000, flow: Optional[OrderFlowModel] = None,
                   sigma_ac=None) -> SolvedStrategy:
    """Solve the Riccati and value terms behind a strategy.

    ``model`` is the model the strategy believes in (restrict it beforehand
    for partial information). AC always uses the reduced model with
    covariance ``sigma_ac`` and ignores ``flow``.
    """
    q0 = np.asarray(q0, dtype=float)
    if spec.kind == "AC":
        smodel = model.ac_reduction(sigma_ac)
        flow = OrderFlowModel.zero_flow(smodel.n)
    else:
        smodel = model
        flow = OrderFlowModel.zero_flow(model.n) if flow is None else flow
    penalty = spec.penalty
    validate_model(smodel, penalty).raise_if_failed()
    target = spec.target
    if target is None:
        if spec.kind == "ULT":
            target = ac_target_schedule(model, q0, horizon, spec.alpha_term, spec.phi_ac,
                                        sigma_ac, grid_steps)
        else:
            target = InventoryTarget.zero(q0, horizon)
    riccati = solve_riccati(build_problem(smodel, penalty, horizon, grid_steps))
    terms = compute_value_terms(riccati, smodel, penalty, target, flow)
    return SolvedStrategy(spec, smodel, riccati, terms, target)
