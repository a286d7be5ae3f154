"""VAR(1) calibration of the co-integrated price model and Johansen rank selection.

A sampled path of ``dP = kappa (theta - P) dt + sigma^T dW`` is exactly a VAR(1)

    P_{k+1} = c + Phi P_k + eps_k,   Phi = exp(-kappa dt),   c = (I - Phi) theta,

so ordinary least squares on ``(1, P_k)`` gives Phi and c, which are mapped back
to continuous time.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import logm

from .model import MarketModel

SECONDS_PER_DAY = 6.5 * 3600.0

# Asymptotic 5% critical values of the Johansen trace statistic with an
# unrestricted intercept, indexed by the number of common trends n - r (1..6).
TRACE_CRIT_5PCT = (3.8415, 15.4943, 29.7961, 47.8545, 69.8189, 95.7542)


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class MidpriceSeries:
    """Uniformly sampled midprices.

    Parameters
    ----------
    times : (T,) array
        Strictly increasing sample times in model units.
    prices : (T, n) array
    labels : sequence of str, optional
    """

    times: np.ndarray
    prices: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if t.ndim != 1 or p.shape[0] != t.size:
            raise EstimationError(f"times has {t.size} entries but prices has {p.shape[0]} rows")
        if not np.all(np.isfinite(p)) or not np.all(np.isfinite(t)):
            raise EstimationError("series contains missing or non-finite values")
        if t.size >= 2:
            d = np.diff(t)
            if np.any(d <= 0):
                raise EstimationError("timestamps must be strictly increasing")
            if np.abs(d - d.mean()).max() > 1e-9 * d.mean():
                raise EstimationError("timestamps must be uniformly spaced")
        labels = None if self.labels is None else tuple(str(x) for x in self.labels)
        if labels is not None and len(labels) != p.shape[1]:
            raise EstimationError("number of labels does not match number of price columns")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "labels", labels)

    @property
    def dt(self) -> float:
        return float(np.diff(self.times).mean())

    @property
    def n(self) -> int:
        return self.prices.shape[1]


def microprice(bid, ask, bid_size, ask_size) -> np.ndarray:
    """Best bid and ask weighted by the volume posted on the opposite side."""
    bid, ask = np.asarray(bid, dtype=float), np.asarray(ask, dtype=float)
    bs, as_ = np.asarray(bid_size, dtype=float), np.asarray(ask_size, dtype=float)
    tot = bs + as_
    if np.any(tot <= 0):
        raise EstimationError("quote sizes must have a positive sum")
    return (bid * as_ + ask * bs) / tot


def read_series_csv(path, quotes: bool = False, seconds_per_unit: float = SECONDS_PER_DAY) -> MidpriceSeries:
    """Read a midprice (or quote) CSV.

    The first column is a timestamp in seconds; the header row names the
    assets. With ``quotes=True`` each asset has four columns
    ``bid, ask, bid_size, ask_size`` and the microprice is used.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EstimationError(f"{path}: empty file") from None
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise EstimationError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise EstimationError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise EstimationError(f"{path}: insufficient observations (no data rows)")
    data = np.array(rows)
    times = data[:, 0] / seconds_per_unit
    cols = data[:, 1:]
    names = header[1:]
    if quotes:
        if cols.shape[1] % 4:
            raise EstimationError(f"{path}:1: quote files need four columns per asset")
        k = cols.shape[1] // 4
        prices = np.column_stack([microprice(*cols[:, 4 * i:4 * i + 4].T) for i in range(k)])
        labels = [names[4 * i].rsplit("_", 1)[0] for i in range(k)]
    else:
        prices, labels = cols, names
    try:
        return MidpriceSeries(times, prices, labels)
    except EstimationError as exc:
        raise EstimationError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class JohansenResult:
    eigenvalues: np.ndarray
    trace_stats: np.ndarray
    crit_5pct: np.ndarray
    rank: int


def johansen_trace(prices, deterministic_tol: float = 1e-12) -> JohansenResult:
    """Johansen trace test for a VAR(1) with unrestricted intercept.

    Regresses out the constant from ``dP_t`` and ``P_{t-1}``, solves the
    reduced-rank eigenproblem ``S11^{-1} S10 S00^{-1} S01`` and compares
    ``-T sum_{i>r} log(1 - lambda_i)`` with the 5% critical values. The rank
    is the smallest r whose null is not rejected.
    """
    P = np.asarray(prices, dtype=float)
    T, n = P.shape[0] - 1, P.shape[1]
    if n > len(TRACE_CRIT_5PCT):
        raise EstimationError(f"critical values are bundled for at most {len(TRACE_CRIT_5PCT)} assets")
    R0 = np.diff(P, axis=0)
    R1 = P[:-1]
    R0 = R0 - R0.mean(0)
    R1 = R1 - R1.mean(0)
    S00 = R0.T @ R0 / T
    S11 = R1.T @ R1 / T
    S01 = R0.T @ R1 / T
    if np.linalg.eigvalsh(S00).min() <= deterministic_tol * max(np.trace(S00), 1e-300):
        raise EstimationError("residuals are degenerate; the trace test needs noisy data")
    L = np.linalg.cholesky(S11)
    Li = np.linalg.inv(L)
    Mx = Li @ S01.T @ np.linalg.solve(S00, S01) @ Li.T
    lam = np.sort(np.clip(np.linalg.eigvalsh(0.5 * (Mx + Mx.T)), 0.0, 1.0 - 1e-15))[::-1]
    tmp = np.log1p(-lam)
    trace = np.array([-T * tmp[r:].sum() for r in range(n)])
    crit = np.array([TRACE_CRIT_5PCT[n - r - 1] for r in range(n)])
    rank = n
    for r in range(n):
        if trace[r] <= crit[r]:
            rank = r
            break
    return JohansenResult(lam, trace, crit, rank)


def select_rank_from_pvalues(pvalues: Sequence[float], level: float = 0.05) -> int:
    """Smallest r whose null ``rank <= r`` is not rejected at ``level``."""
    for r, p in enumerate(pvalues):
        if p > level:
            return r
    return len(pvalues)


@dataclass(frozen=True)
class VarFit:
    """VAR(1) estimates and their continuous-time mapping."""

    Phi: np.ndarray
    c: np.ndarray
    resid_cov: np.ndarray
    Phi_stderr: np.ndarray
    kappa: np.ndarray
    kappa_stderr: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray
    rank: int
    trace_stats: np.ndarray
    trace_crit: np.ndarray
    dt: float
    n_obs: int
    log_fallback: bool = False
    labels: Optional[tuple] = None

    def to_model(self, a_temp, b_perm=None, b_bar=None) -> MarketModel:
        S = 0.5 * (self.sigma + self.sigma.T)
        return MarketModel(kappa=self.kappa, theta=self.theta, sigma_cov=S, a_temp=a_temp,
                           b_perm=b_perm, b_bar=b_bar, labels=self.labels)

    def report(self) -> dict:
        tolist = lambda x: np.asarray(x).tolist()
        return {
            "n_obs": self.n_obs, "dt": self.dt, "labels": None if self.labels is None else list(self.labels),
            "Phi": tolist(self.Phi), "c": tolist(self.c), "Phi_stderr": tolist(self.Phi_stderr),
            "kappa": tolist(self.kappa), "kappa_stderr": tolist(self.kappa_stderr),
            "theta": tolist(self.theta), "sigma": tolist(self.sigma),
            "resid_cov": tolist(self.resid_cov),
            "rank": self.rank,
            "trace_test": [{"r": r, "statistic": float(s), "crit_5pct": float(cv),
                            "reject": bool(s > cv)}
                           for r, (s, cv) in enumerate(zip(self.trace_stats, self.trace_crit))],
            "log_fallback": self.log_fallback,
        }


def _real_logm(Phi):
    w = np.linalg.eigvals(Phi)
    if np.any((np.abs(w.imag) < 1e-12) & (w.real <= 0)):
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        L = logm(Phi)
    if np.iscomplexobj(L):
        if np.abs(L.imag).max() > 1e-8 * max(np.abs(L.real).max(), 1.0):
            return None
        L = L.real
    return np.asarray(L, dtype=float)


def _logm_jacobian(Phi, step: float = 1e-7) -> np.ndarray:
    """Central-difference Jacobian of ``vec(logm(Phi))`` (row-major vec)."""
    n = Phi.shape[0]
    J = np.empty((n * n, n * n))
    for j in range(n * n):
        E = np.zeros(n * n)
        E[j] = step
        E = E.reshape(n, n)
        J[:, j] = (_real_logm(Phi + E) - _real_logm(Phi - E)).ravel() / (2 * step)
    return J


def fit_var(series: MidpriceSeries, rank: Optional[int] = None) -> VarFit:
    """Fit ``P_{k+1} = c + Phi P_k`` by OLS and map to ``(kappa, theta, Sigma)``.

    ``kappa = -logm(Phi) / dt`` when a real logarithm exists, otherwise
    ``(I - Phi) / dt`` with ``log_fallback`` set. Standard errors of kappa
    come from the OLS covariance through the Jacobian of the matrix log.
    ``theta`` solves ``(I - Phi) theta = c``; when the selected rank r is
    below n only the r-dimensional stationary part is identified, and the
    remaining directions are pinned to the sample mean.

    Raises
    ------
    EstimationError
        With fewer than ``n^2 + 10`` observations or a singular regressor matrix.
    """
    P = series.prices
    Tn, n = P.shape
    if Tn < n * n + 10:
        raise EstimationError(f"insufficient observations: need at least {n * n + 10}, got {Tn}")
    dt = series.dt
    Xr = np.column_stack([np.ones(Tn - 1), P[:-1]])
    Y = P[1:]
    if np.linalg.matrix_rank(Xr) < n + 1:
        raise EstimationError("singular regressor matrix")
    B, *_ = np.linalg.lstsq(Xr, Y, rcond=None)
    c, Phi = B[0], B[1:].T
    E = Y - Xr @ B
    dof = Tn - 1 - (n + 1)
    Se = E.T @ E / dof
    XtXi = np.linalg.inv(Xr.T @ Xr)
    Phi_se = np.sqrt(np.outer(np.diag(Se), np.diag(XtXi)[1:]))
    cov_phi = np.kron(Se, XtXi[1:, 1:])

    I = np.eye(n)
    L = _real_logm(Phi)
    fallback = L is None
    if fallback:
        warnings.warn("VAR lag matrix has no real logarithm; using (I - Phi)/dt", RuntimeWarning)
        kappa = (I - Phi) / dt
        J = np.eye(n * n)
    else:
        kappa = -L / dt
        J = _logm_jacobian(Phi)
    kappa_se = np.sqrt(np.clip(np.diag(J @ cov_phi @ J.T), 0.0, None)).reshape(n, n) / dt

    if rank is None:
        try:
            jo = johansen_trace(P)
            rank, trace, crit = jo.rank, jo.trace_stats, jo.crit_5pct
        except EstimationError:
            s = np.linalg.svd(I - Phi, compute_uv=False)
            rank = int(np.sum(s > 1e-8 * max(s.max(), 1e-300)))
            trace = np.full(n, np.nan)
            crit = np.array([TRACE_CRIT_5PCT[n - r - 1] for r in range(n)]) if n <= 6 else np.full(n, np.nan)
    else:
        trace = np.full(n, np.nan)
        crit = np.full(n, np.nan)

    Pbar = P.mean(0)
    if rank >= n:
        theta = np.linalg.solve(I - Phi, c)
    elif rank == 0:
        theta = Pbar.copy()
    else:
        U, s, Vt = np.linalg.svd(I - Phi)
        resid = c - (I - Phi) @ Pbar
        theta = Pbar + Vt[:rank].T @ ((U[:, :rank].T @ resid) / s[:rank])
    return VarFit(Phi=Phi, c=c, resid_cov=Se, Phi_stderr=Phi_se, kappa=kappa, kappa_stderr=kappa_se,
                  theta=theta, sigma=Se / dt, rank=int(rank), trace_stats=trace, trace_crit=crit,
                  dt=dt, n_obs=Tn, log_fallback=fallback, labels=series.labels)


def normalize_weights(w) -> np.ndarray:
    """Unit Euclidean norm with the largest-magnitude entry positive."""
    w = np.asarray(w, dtype=float)
    nrm = np.linalg.norm(w)
    if nrm == 0:
        raise EstimationError("zero co-integration vector")
    w = w / nrm
    return w if w[np.argmax(np.abs(w))] > 0 else -w


def cointegration_weights(fit: VarFit) -> np.ndarray:
    """Dominant co-integrating vector: top right singular vector of kappa.

    With ``kappa = v w^T`` the stationary combination is ``w^T P``.

    Raises
    ------
    EstimationError
        If the selected rank is zero.
    """
    if fit.rank < 1:
        raise EstimationError("co-integration rank is zero; no co-integrating vector")
    _, _, Vt = np.linalg.svd(fit.kappa)
    return normalize_weights(Vt[0])


def fit_diffusion_covariance(series: MidpriceSeries, m: Optional[int] = None) -> np.ndarray:
    """Drift-free covariance of the first ``m`` assets, as seen by the AC benchmark."""
    P = series.prices if m is None else series.prices[:, :m]
    d = np.diff(P, axis=0)
    return d.T @ d / (d.shape[0] * series.dt)
