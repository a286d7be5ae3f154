"""Backward solution of the block matrix Riccati equation.

In backward time tau = T - t the stacked matrix

    G = [[2A, E - X^T], [E^T - X, 2C]]

solves ``dG/dtau = G M1 G + G M2 + M2^T G + M3`` with ``G(tau=0) = G_T``.
We integrate the equivalent linear Hamiltonian system for ``G = V U^{-1}``,

    dU/dtau = -M2 U - M1 V,    dV/dtau = M3 U + M2^T V,

restarting every step from ``(U, V) = (I, G_k)``. Each step is a classical
RK4 step of this linear system; it is algebraically a Moebius map of G, so it
stays stable when the terminal penalty is huge and a is tiny, where RK4 applied
to the quadratic equation itself would need an absurdly fine grid.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .model import MarketModel, PenaltySpec, sub_covariance

BLOWUP_LIMIT = 1e12


class RiccatiBlowUpError(RuntimeError):
    """The solution left the bounded region; ``time`` is the first failing grid time."""

    def __init__(self, time: float, message: str = ""):
        self.time = float(time)
        super().__init__(f"Riccati solution blew up at t={time:.6g}. {message}".strip())


@dataclass(frozen=True)
class RiccatiProblem:
    """Block coefficients of the Riccati terminal-value problem.

    Use :func:`build_problem` rather than filling the blocks by hand.
    """

    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray
    G_terminal: np.ndarray
    horizon: float
    grid_steps: int
    model: MarketModel
    penalty: PenaltySpec

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m

    @property
    def hamiltonian(self) -> np.ndarray:
        return np.block([[-self.M2, -self.M1], [self.M3, self.M2.T]])


def build_problem(model: MarketModel, penalty: PenaltySpec, horizon: float,
                  grid_steps: int = 20000) -> RiccatiProblem:
    """Assemble M1, M2, M3 and G(T) for a model and penalty.

    The price deviation Z = S - theta has drift ``-kappa Z``. Its adjoint
    shows up transposed in the off-diagonal source blocks::

        M1 = 1/2 blockdiag(0, a^{-1})
        M2 = [[-kappa, 0], [0, 0]]
        M3 = [[0, -kappa^T X^T], [-X kappa, -2 phi Sigma~]]
        G_T = blockdiag(0, X b X^T - 2 alpha)
    """
    if grid_steps < 1:
        raise ValueError("grid_steps must be positive")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n, m = model.n, model.m
    X = model.selection
    kap = np.asarray(model.kappa)
    N = n + m
    M1 = np.zeros((N, N))
    M1[n:, n:] = 0.5 * np.linalg.inv(model.a_temp)
    M2 = np.zeros((N, N))
    M2[:n, :n] = -kap
    M3 = np.zeros((N, N))
    M3[:n, n:] = -kap.T @ X.T
    M3[n:, :n] = -X @ kap
    M3[n:, n:] = -2.0 * penalty.phi * sub_covariance(model)
    GT = np.zeros((N, N))
    GT[n:, n:] = X @ model.b_perm @ X.T - 2.0 * penalty.alpha_term
    for M in (M1, M2, M3, GT):
        M.setflags(write=False)
    return RiccatiProblem(M1, M2, M3, GT, float(horizon), int(grid_steps), model, penalty)


def rk4_propagator(ham: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step of ``dY/dtau = ham Y`` as a matrix."""
    Hh = ham * h
    I = np.eye(ham.shape[0])
    Hh2 = Hh @ Hh
    return I + Hh + Hh2 / 2.0 + Hh2 @ Hh / 6.0 + Hh2 @ Hh2 / 24.0


def mobius_step(P: np.ndarray, G: np.ndarray):
    """Apply the step propagator ``P`` to ``[I; G]``.

    Returns
    -------
    G_new : ndarray
        Symmetrized ``V U^{-1}``.
    U : ndarray
        The U block, needed by the value-term solver.
    """
    N = G.shape[0]
    U = P[:N, :N] + P[:N, N:] @ G
    V = P[N:, :N] + P[N:, N:] @ G
    Gn = np.linalg.solve(U.T, V.T).T
    return 0.5 * (Gn + Gn.T), U


class RiccatiSolution:
    """G(t) on a uniform grid ``t_0 = 0 < ... < t_K = T``.

    Attributes
    ----------
    times : (K+1,) array
    G : (K+1, n+m, n+m) array
    A, C, E : arrays
        ``A = G11 / 2``, ``C = G22 / 2``, ``E = G12 + X^T``, one slice per grid time.
    """

    def __init__(self, problem: RiccatiProblem, times: np.ndarray, G: np.ndarray):
        self.problem = problem
        self.times = times
        self.G = G
        n = problem.n
        self.A = 0.5 * G[:, :n, :n]
        self.C = 0.5 * G[:, n:, n:]
        self.E = G[:, :n, n:] + problem.model.selection.T
        for arr in (self.times, self.G, self.A, self.C, self.E):
            arr.setflags(write=False)

    @property
    def horizon(self) -> float:
        return self.problem.horizon

    @property
    def step(self) -> float:
        return self.problem.horizon / self.problem.grid_steps

    def _weights(self, t: float):
        T = self.horizon
        if not (-1e-12 * T <= t <= T * (1 + 1e-12)):
            raise ValueError(f"t={t} outside [0, {T}]")
        x = min(max(t / self.step, 0.0), float(self.problem.grid_steps))
        k = min(int(np.floor(x)), self.problem.grid_steps - 1)
        w = x - k
        if abs(w) < 1e-9:
            w = 0.0
        elif abs(w - 1) < 1e-9:
            k, w = k + 1, 0.0
        return k, w

    def interpolate(self, arr: np.ndarray, t: float) -> np.ndarray:
        """Linear interpolation in t of any array living on the grid."""
        k, w = self._weights(t)
        if w == 0.0:
            return arr[k]
        return (1 - w) * arr[k] + w * arr[k + 1]

    def coefficients(self, t: float):
        """``(A(t), C(t), E(t))`` interpolated linearly between grid points."""
        return (self.interpolate(self.A, t), self.interpolate(self.C, t),
                self.interpolate(self.E, t))

    def midpoint_G(self, k: int) -> np.ndarray:
        """G at ``(t_k + t_{k+1}) / 2`` obtained by a half step from ``t_{k+1}``."""
        P = rk4_propagator(self.problem.hamiltonian, 0.5 * self.step)
        return mobius_step(P, self.G[k + 1])[0]

    def to_csv(self, path) -> None:
        """Dump ``t, vec(A), vec(C), vec(E)`` (row-major) one row per grid time."""
        n, m = self.problem.n, self.problem.m
        header = (["t"] + [f"A_{i}_{j}" for i in range(n) for j in range(n)]
                  + [f"C_{i}_{j}" for i in range(m) for j in range(m)]
                  + [f"E_{i}_{j}" for i in range(n) for j in range(m)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in
                           np.concatenate([self.A[k].ravel(), self.C[k].ravel(), self.E[k].ravel()])])


def solve_riccati(problem: RiccatiProblem) -> RiccatiSolution:
    """Integrate the Riccati equation backward from T to 0 with fixed-step RK4.

    Raises
    ------
    RiccatiBlowUpError
        If an entry becomes non-finite or exceeds 1e12 in magnitude.
    """
    K = problem.grid_steps
    h = problem.horizon / K
    times = np.linspace(0.0, problem.horizon, K + 1)
    P = rk4_propagator(problem.hamiltonian, h)
    N = problem.G_terminal.shape[0]
    G = np.empty((K + 1, N, N))
    G[K] = problem.G_terminal
    for k in range(K - 1, -1, -1):
        try:
            Gk, U = mobius_step(P, G[k + 1])
        except np.linalg.LinAlgError:
            raise RiccatiBlowUpError(times[k], "singular Hamiltonian block") from None
        # det U starts at 1; a sign change means the solution crossed a pole in this step
        if np.linalg.det(U) <= 0:
            raise RiccatiBlowUpError(times[k], "solution passed through a pole")
        if not np.all(np.isfinite(Gk)) or np.abs(Gk).max() > BLOWUP_LIMIT:
            raise RiccatiBlowUpError(times[k])
        G[k] = Gk
    return RiccatiSolution(problem, times, G)


@dataclass(frozen=True)
class AsymptoticCoefficients:
    """Leading terms of the expansion of A, C, E in tau = T - t.

    ``A ~ A1 tau``, ``C ~ C_m1 / tau + C0``, ``E ~ E0 + E1 tau``.
    """

    A1: np.ndarray
    C_m1: np.ndarray
    C0: np.ndarray
    E0: np.ndarray
    E1: np.ndarray
    a_temp: np.ndarray
    xb_bar: np.ndarray


def asymptotic_coefficients(model: MarketModel, penalty: PenaltySpec) -> AsymptoticCoefficients:
    """Closed-form series coefficients for the guaranteed-liquidation limit."""
    n, m = model.n, model.m
    X = model.selection
    a = np.array(model.a_temp)
    return AsymptoticCoefficients(
        A1=np.zeros((n, n)),
        C_m1=-a,
        C0=np.zeros((m, m)),
        E0=X.T.copy(),
        E1=-0.5 * np.asarray(model.kappa).T @ X.T,
        a_temp=a,
        xb_bar=X @ model.b_bar,
    )


def oracle_bound_solution(model: MarketModel, penalty: PenaltySpec, t: float,
                          horizon: float, nodes: int = 40):
    """Closed-form upper comparison solution ``(H11(t), H22(t))``.

    H solves the decoupled Riccati problem whose source dominates M3, so
    ``blockdiag(H11, H22) - G(t)`` is positive semidefinite::

        H11(t) = gamma * int_t^T exp(kappa^T (t-u)) exp(kappa (t-u)) du
        H22(t) = -(1/2 (T-t) a^{-1} + (2 alpha - X b X^T)^{-1})^{-1}

    with gamma the largest eigenvalue of
    ``kappa^T X^T Sigma~^{-1} X kappa / (2 phi)``. The integral uses
    Gauss-Legendre quadrature.

    Raises
    ------
    ValueError
        If Sigma~ is singular or phi is zero.
    """
    X = model.selection
    kap = np.asarray(model.kappa)
    St = sub_covariance(model)
    if penalty.phi <= 0:
        raise ValueError("phi must be positive for the H11 bound")
    if np.linalg.cond(St) > 1e14:
        raise ValueError("traded sub-covariance is singular")
    Kx = X @ kap
    gmax = float(np.linalg.eigvalsh(Kx.T @ np.linalg.solve(St, Kx) / (2 * penalty.phi)).max())
    tau = horizon - t
    n = model.n
    H11 = np.zeros((n, n))
    if tau > 0 and gmax != 0:
        x, w = np.polynomial.legendre.leggauss(nodes)
        s = 0.5 * tau * (x + 1)
        for si, wi in zip(s, w):
            ek = expm(-kap * si)
            H11 += wi * ek.T @ ek
        H11 *= 0.5 * tau * gmax
    H11 = 0.5 * (H11 + H11.T)
    a_inv = np.linalg.inv(model.a_temp)
    K = 2.0 * penalty.alpha_term - X @ model.b_perm @ X.T
    H22 = -np.linalg.inv(0.5 * tau * a_inv + np.linalg.inv(K))
    return H11, 0.5 * (H22 + H22.T)
