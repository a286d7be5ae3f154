"""Linear value-function terms D, B, F and the full quadratic value function.

With affine order flow the terms are affine in mu,

    D(t, mu) = D0 + D1 mu,   B(t, mu) = B0 + B1 mu,   F(t, mu) = F0 + F1.mu + mu.F2 mu,

and the coefficients solve linear ODEs driven by the Riccati solution. Writing
``L = [B; D]`` these read, in backward time,

    dL/dtau = (G M1 + M2^T) L + L^mu-terms + [0; zeta].

With ``G = V U^{-1}`` from the Hamiltonian system, ``L = U^{-T} W`` where
``dW/dtau = U^T src``, which integrates cleanly even when G is huge near T.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .model import InventoryTarget, MarketModel, OrderFlowModel, PenaltySpec, sub_covariance
from .riccati import (RiccatiSolution, build_problem, mobius_step, rk4_propagator,
                      solve_riccati)


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ValueTerms:
    """Coefficients of D, B, F on the Riccati grid (leading axis = time)."""

    times: np.ndarray
    D0: np.ndarray
    D1: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    F0: np.ndarray
    F1: np.ndarray
    F2: np.ndarray

    def D(self, k: int, mu=None) -> np.ndarray:
        out = self.D0[k]
        if mu is not None:
            out = out + self.D1[k] @ mu
        return out


def _check_inputs(riccati, model, target, flow):
    T = riccati.horizon
    if target is not None and abs(target.horizon - T) > 1e-12 * max(T, 1.0):
        raise GridMismatchError(f"target horizon {target.horizon} does not match grid horizon {T}")
    if target is not None and target.m != model.m:
        raise GridMismatchError(f"target has {target.m} assets, model trades {model.m}")
    if flow.n != model.n:
        raise GridMismatchError(f"order flow has dimension {flow.n}, model has {model.n}")
    if riccati.problem.model.n != model.n or riccati.problem.model.m != model.m:
        raise GridMismatchError("Riccati solution was built for a different model size")


def _target_grid(target: InventoryTarget, times: np.ndarray) -> np.ndarray:
    if target.is_zero():
        return np.zeros((times.size, target.m))
    return np.array([target(t) for t in times])


def _stage_operators(ham: np.ndarray, h: float):
    """RK4 stage states of ``dY/dtau = ham Y`` as matrices acting on the step's start."""
    I = np.eye(ham.shape[0])
    S2 = I + 0.5 * h * ham
    S3 = I + 0.5 * h * ham @ S2
    S4 = I + h * ham @ S3
    return (I, S2, S3, S4)


def compute_value_terms(riccati: RiccatiSolution, model: MarketModel, penalty: PenaltySpec,
                        target: InventoryTarget, flow: OrderFlowModel) -> ValueTerms:
    """Integrate the D, B, F coefficient ODEs backward on the Riccati grid.

    Each grid interval is one classical RK4 step of the augmented system
    ``(U, V, W0, W1, F0, F1, F2)`` started from ``(I, G_{k+1}, L_{k+1}, ...)``.
    Because the Hamiltonian is constant, the U and V stage values are fixed
    matrix polynomials applied to ``[I; G_{k+1}]`` and are computed for all
    intervals at once. The target is sampled at grid points and midpoints.

    Raises
    ------
    GridMismatchError
        If the target horizon or dimensions do not match the Riccati grid.
    """
    _check_inputs(riccati, model, target, flow)
    prob = riccati.problem
    n, m = model.n, model.m
    N = n + m
    K = prob.grid_steps
    h = riccati.step
    times = riccati.times
    X = model.selection
    a_inv = np.linalg.inv(model.a_temp)
    Sig = model.sigma_psd()
    St = sub_covariance(model)
    phi = penalty.phi
    Km = np.asarray(flow.mean_reversion)
    Kmu = Km @ flow.mean
    Smu = np.asarray(flow.diffusion_cov)
    has_flow = not flow.is_zero

    Qg = _target_grid(target, times)
    Qmid = (np.zeros((K, m)) if target.is_zero()
            else _target_grid(target, 0.5 * (times[1:] + times[:-1])))
    Qstage = (Qg[1:], Qmid, Qmid, Qg[:-1])
    Xbb = X @ model.b_bar
    has_src = bool(np.any(Qg) or np.any(Qmid)) and phi != 0.0 or bool(np.any(Xbb))

    # stage U^{-1} and G for all intervals, shape (K, N, N)
    Gs = riccati.G[1:]
    Uinv, G11 = [], []
    for S in _stage_operators(prob.hamiltonian, h):
        U = S[:N, :N] + S[:N, N:] @ Gs
        V = S[N:, :N] + S[N:, N:] @ Gs
        Ui = np.linalg.inv(U)
        Uinv.append(Ui)
        G11.append((V @ Ui)[:, :n, :n])
    tr = [0.5 * np.einsum("ij,kij->k", Sig, g) for g in G11]
    pq = [phi * np.einsum("ki,ij,kj->k", Q, St, Q) for Q in Qstage]
    base = [t - p for t, p in zip(tr, pq)]

    D0 = np.zeros((K + 1, m)); D1 = np.zeros((K + 1, m, n))
    B0 = np.zeros((K + 1, n)); B1 = np.zeros((K + 1, n, n))
    F0 = np.zeros(K + 1); F1 = np.zeros((K + 1, n)); F2 = np.zeros((K + 1, n, n))
    q0 = target.q0
    bq = X @ model.b_perm @ X.T
    F0[K] = model.theta @ X.T @ q0 - 0.5 * q0 @ bq @ q0

    if not has_src:
        # D, B vanish identically; F0 is a plain quadrature of the stage values
        inc = h / 6 * (base[0] + 2 * base[1] + 2 * base[2] + base[3])
        F0[:K] = F0[K] + np.cumsum(inc[::-1])[::-1]
    else:
        Pfull = rk4_propagator(prob.hamiltonian, h)
        Ufull = Pfull[:N, :N] + Pfull[:N, N:] @ Gs
        src1 = np.zeros((N, n))
        src1[n:] = Xbb
        src0 = [np.zeros((K, N)) for _ in range(4)]
        for i in range(4):
            src0[i][:, n:] = 2.0 * phi * Qstage[i] @ St.T
        # U^T src for each stage; U = inverse of the stored U^{-1}
        Ust = [np.linalg.inv(Ui) for Ui in Uinv]
        g0 = [np.einsum("kji,kj->ki", U, s0) for U, s0 in zip(Ust, src0)]
        g1 = [np.einsum("kji,jl->kil", U, src1) for U in Ust]
        cw = (1.0, 2.0, 2.0, 1.0)
        half = (0.0, 0.5 * h, 0.5 * h, h)
        W0 = np.zeros(N); W1 = np.zeros((N, n))
        f0, f1, f2 = F0[K], np.zeros(n), np.zeros((n, n))
        for k in range(K - 1, -1, -1):
            W0 = np.concatenate([B0[k + 1], D0[k + 1]])
            W1 = np.concatenate([B1[k + 1], D1[k + 1]], axis=0)
            f0, f1, f2 = F0[k + 1], F1[k + 1], F2[k + 1]
            acc = [np.zeros(N), np.zeros((N, n)), 0.0, np.zeros(n), np.zeros((n, n))]
            prev = None
            for i in range(4):
                if prev is None:
                    w0, w1, e0, e1, e2 = W0, W1, f0, f1, f2
                else:
                    c = half[i]
                    w0 = W0 + c * prev[0]; w1 = W1 + c * prev[1]
                    e1 = f1 + c * prev[3]; e2 = f2 + c * prev[4]
                Ui = Uinv[i][k]
                d0 = Ui[:, n:].T @ w0
                dw0 = g0[i][k]
                df0 = 0.25 * d0 @ a_inv @ d0 + base[i][k]
                if has_flow:
                    d1 = Ui[:, n:].T @ w1
                    dw0 = dw0 + w1 @ Kmu
                    dw1 = -w1 @ Km + g1[i][k]
                    df0 = df0 + Kmu @ e1 + np.sum(Smu * e2)
                    df1 = -Km.T @ e1 + 2.0 * e2 @ Kmu + 0.5 * d1.T @ a_inv @ d0
                    df2 = -(Km.T @ e2 + e2 @ Km) + 0.25 * d1.T @ a_inv @ d1
                else:
                    dw1 = g1[i][k]; df1 = acc[3] * 0; df2 = acc[4] * 0
                prev = (dw0, dw1, df0, df1, df2)
                for j in range(5):
                    acc[j] = acc[j] + cw[i] * prev[j]
            W0 = W0 + h / 6 * acc[0]
            W1 = W1 + h / 6 * acc[1]
            L0 = np.linalg.solve(Ufull[k].T, W0)
            B0[k], D0[k] = L0[:n], L0[n:]
            F0[k] = f0 + h / 6 * acc[2]
            if has_flow:
                L1 = np.linalg.solve(Ufull[k].T, W1)
                B1[k], D1[k] = L1[:n], L1[n:]
                F1[k] = f1 + h / 6 * acc[3]
                e = f2 + h / 6 * acc[4]
                F2[k] = 0.5 * (e + e.T)
            elif np.any(Xbb):
                L1 = np.linalg.solve(Ufull[k].T, W1)
                B1[k], D1[k] = L1[:n], L1[n:]
    for arr in (D0, D1, B0, B1, F0, F1, F2):
        arr.setflags(write=False)
    return ValueTerms(times, D0, D1, B0, B1, F0, F1, F2)


def evaluate_value_function(terms: ValueTerms, riccati: RiccatiSolution, t: float, y: float,
                            z, q, mu=None) -> float:
    """Value ``H = y + z'Az + z'B + q'Cq + q'D + z'Eq + F`` at time ``t``.

    Raises
    ------
    ValueError
        If ``t`` lies outside ``[0, T]``.
    """
    z = np.asarray(z, dtype=float)
    q = np.asarray(q, dtype=float)
    mu = np.zeros(z.size) if mu is None else np.asarray(mu, dtype=float)
    A, C, E = riccati.coefficients(t)
    ip = lambda arr: riccati.interpolate(arr, t)
    B = ip(terms.B0) + ip(terms.B1) @ mu
    D = ip(terms.D0) + ip(terms.D1) @ mu
    F = ip(terms.F0) + ip(terms.F1) @ mu + mu @ ip(terms.F2) @ mu
    return float(y + z @ A @ z + z @ B + q @ C @ q + q @ D + z @ E @ q + F)


# ------------------------------------------------------------------ dual route

def _simpson_weights(count: int, h: float) -> np.ndarray:
    """Composite Simpson weights on ``count`` intervals (3/8 rule on the first three if odd)."""
    w = np.zeros(count + 1)
    if count == 0:
        return w
    if count == 1:
        w[:] = h / 2
        return w
    start = 0
    if count % 2 == 1:
        w[:4] += 3 * h / 8 * np.array([1, 3, 3, 1])
        start = 3
    rest = count - start
    if rest:
        ws = np.ones(rest + 1)
        ws[1:-1:2] = 4
        ws[2:-1:2] = 2
        w[start:] += h / 3 * ws
    return w


def time_ordered_D(riccati: RiccatiSolution, model: MarketModel, penalty: PenaltySpec,
                   target: InventoryTarget, flow: OrderFlowModel,
                   indices: Optional[Sequence[int]] = None):
    """D0, D1 from the time-ordered-exponential representation.

    ``D(t, mu) = int_t^T Phi(t, u) (2 phi Sigma~ Q_u + X b_bar E[mu_u | mu_t]) du``
    where ``Phi`` is the ordered product of per-interval exponentials of a
    fourth-order Magnus step of ``C(.) a^{-1}``, and the outer integral uses
    composite Simpson on the Riccati grid. This route shares nothing with
    :func:`compute_value_terms` besides the Riccati grid.

    Returns
    -------
    dict mapping grid index -> (D0, D1)
    """
    _check_inputs(riccati, model, target, flow)
    K = riccati.problem.grid_steps
    h = riccati.step
    times = riccati.times
    n, m = model.n, model.m
    X = model.selection
    a_inv = np.linalg.inv(model.a_temp)
    St = sub_covariance(model)
    Xbb = X @ model.b_bar
    Qg = _target_grid(target, times)
    zeta0 = 2.0 * penalty.phi * Qg @ St.T
    indices = [0] if indices is None else list(indices)

    Ct = riccati.C @ a_inv
    exps = []
    for i in range(K):
        Cm = 0.5 * riccati.midpoint_G(i)[n:, n:] @ a_inv
        Om = h / 6 * (Ct[i] + 4 * Cm + Ct[i + 1]) + h * h / 12 * (Ct[i] @ Ct[i + 1] - Ct[i + 1] @ Ct[i])
        exps.append(expm(Om))
    Km = np.asarray(flow.mean_reversion)
    beta_step = expm(-Km * h)
    out = {}
    for j in indices:
        w = _simpson_weights(K - j, h)
        Phi = np.eye(m)
        beta = np.eye(n)
        d0 = w[0] * (zeta0[j] + Xbb @ (flow.mean - beta @ flow.mean))
        d1 = w[0] * Xbb @ beta
        for l in range(j + 1, K + 1):
            Phi = Phi @ exps[l - 1]
            beta = beta @ beta_step
            wl = w[l - j]
            if wl == 0.0:
                continue
            d0 = d0 + wl * Phi @ (zeta0[l] + Xbb @ (flow.mean - beta @ flow.mean))
            d1 = d1 + wl * Phi @ Xbb @ beta
        out[j] = (d0, d1)
    return out


# ------------------------------------------------------------ AC target schedule

def ac_target_schedule(model: MarketModel, q0, horizon: float, alpha_term,
                       phi_ac: float = 0.1, sigma_ac=None, grid_steps: int = 20000) -> InventoryTarget:
    """Inventory path of the Almgren-Chriss strategy, used as an inventory target.

    Under the AC reduction the inventory follows ``dq/dt = a^{-1} C(t) q``.
    The Hamiltonian U block propagates it: over one grid interval,
    ``q_{k+1} = U_k^{-1} q_k`` where ``U_k`` is the step's U block. Values at
    interval midpoints are stored too, so the schedule is sampled on a grid
    twice as fine as the solver's and quadratures on either grid see exact
    values.
    """
    ac = model.ac_reduction(sigma_ac)
    pen = PenaltySpec(phi_ac, alpha_term)
    prob = build_problem(ac, pen, horizon, grid_steps)
    sol = solve_riccati(prob)
    P = rk4_propagator(prob.hamiltonian, sol.step)
    m = ac.m
    Q = np.empty((grid_steps + 1, m))
    Q[0] = np.asarray(q0, dtype=float)
    for k in range(grid_steps):
        U = mobius_step(P, sol.G[k + 1])[1]
        Q[k + 1] = np.linalg.solve(U[m:, m:], Q[k])
    Q[-1] = 0.0
    Ph = rk4_propagator(prob.hamiltonian, 0.5 * sol.step)
    fine = np.empty((2 * grid_steps + 1, m))
    fine[::2] = Q
    for k in range(grid_steps):
        U = mobius_step(Ph, sol.G[k + 1])[1]
        fine[2 * k + 1] = U[m:, m:] @ Q[k + 1]
    times = np.linspace(0.0, horizon, 2 * grid_steps + 1)
    return InventoryTarget.from_grid(times, fine)
