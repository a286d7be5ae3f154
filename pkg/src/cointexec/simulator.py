"""Monte Carlo simulation of prices, inventories and wealth under a strategy.

Every path draws its Gaussian increments from its own counter-based Philox
stream keyed by ``(path index, seed)``, so results do not depend on how paths
are chunked or in which order they run. All strategies in a comparison see
the same paths (common random numbers).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .model import MarketModel, OrderFlowModel, PenaltySpec, clamp_psd, sub_covariance
from .strategies import SolvedStrategy, StrategySpec, build_strategy, series_tail_speed

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
SCENARIOS = ("full", "partial")


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    Parameters
    ----------
    path_count, step_count : int
        Number of paths and of time steps over ``[0, horizon]``.
    rng_seed : int
        Master seed; path ``i`` uses the Philox key ``(i, rng_seed)``.
    q0 : (m,) array
        Initial inventory.
    z0 : (n,) array, optional
        Initial ``S - theta``; zero by default.
    scenario : {"full", "partial"}
        ``partial`` solves non-benchmark strategies on the traded assets only.
    horizon : float
        Execution window in model time units (default one hour of a 6.5 h day).
    alpha : float
        Isotropic terminal penalty.
    grid_refine : int
        Riccati grid steps per simulation step (grids are aligned).
    chunk_size : int
        Paths simulated together in memory.
    """

    path_count: int
    q0: Tuple[float, ...]
    step_count: int = 3600
    rng_seed: int = 0
    z0: Optional[Tuple[float, ...]] = None
    scenario: str = "full"
    horizon: float = 1.0 / 6.5
    alpha: float = 1e6
    grid_refine: int = 6
    chunk_size: int = 2000

    def __post_init__(self):
        if self.step_count < 2:
            raise ValueError("step_count must be at least 2")
        if self.path_count < 1:
            raise ValueError("path_count must be at least 1")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        object.__setattr__(self, "q0", tuple(float(x) for x in np.atleast_1d(self.q0)))
        if self.z0 is not None:
            object.__setattr__(self, "z0", tuple(float(x) for x in np.atleast_1d(self.z0)))

    @property
    def dt(self) -> float:
        return self.horizon / self.step_count

    @property
    def grid_steps(self) -> int:
        return self.step_count * self.grid_refine


def _rmul(x, M):
    """``x @ M.T`` over the last axis without BLAS, so each row's result is
    bit-identical whatever the batch size."""
    return np.einsum("...j,ij->...i", x, M)


def noise_factor(cov: np.ndarray) -> np.ndarray:
    """A matrix ``L`` with ``L L^T = cov``; Cholesky, or an eigen square root when singular.

    Raises
    ------
    ValueError
        If ``cov`` is not PSD after clamping round-off.
    """
    S = clamp_psd(np.asarray(cov, dtype=float))
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        return V * np.sqrt(np.clip(w, 0.0, None))


def path_normals(seed: int, path: int, steps: int, dim: int) -> np.ndarray:
    """Standard normals of shape ``(steps, dim)`` for one path."""
    gen = np.random.Generator(np.random.Philox(key=np.array([path, seed], dtype=np.uint64)))
    return gen.standard_normal((steps, dim))


@dataclass
class PathChunk:
    """Simulated market states for a block of paths.

    ``Z`` has shape ``(paths, steps+1, n)``; ``mu`` likewise or None for zero flow.
    """

    indices: np.ndarray
    Z: np.ndarray
    mu: Optional[np.ndarray]


class PathSet:
    """Lazily simulated market paths; iterate with :meth:`chunks`."""

    def __init__(self, model: MarketModel, flow: OrderFlowModel, config: SimConfig,
                 record_every: int = 1):
        if flow.n != model.n:
            raise ValueError("order flow dimension does not match the model")
        self.model = model
        self.flow = flow
        self.config = config
        self.record_every = int(record_every)
        if config.step_count % self.record_every:
            raise ValueError("record_every must divide step_count")
        self._L = noise_factor(model.sigma_cov)
        self._Lmu = None if flow.is_zero else noise_factor(flow.diffusion_cov)

    @property
    def times(self) -> np.ndarray:
        c = self.config
        return np.linspace(0.0, c.horizon, c.step_count // self.record_every + 1)

    def simulate(self, indices: np.ndarray) -> PathChunk:
        c = self.config
        model, n = self.model, self.model.n
        N, dt, r = c.step_count, c.dt, self.record_every
        p = len(indices)
        has_flow = not self.flow.is_zero
        dims = 2 * n if has_flow else n
        eps = np.stack([path_normals(c.rng_seed, int(i), N, dims) for i in indices])
        sq = np.sqrt(dt)
        dW = _rmul(eps[:, :, :n], self._L) * sq
        kap = np.asarray(model.kappa)
        z = np.zeros((p, n)) if c.z0 is None else np.tile(np.asarray(c.z0), (p, 1))
        Z = np.empty((p, N // r + 1, n))
        Z[:, 0] = z
        if has_flow:
            Km = np.asarray(self.flow.mean_reversion)
            mbar = self.flow.mean
            dB = _rmul(eps[:, :, n:], self._Lmu) * sq
            mu = np.tile(mbar, (p, 1))
            M = np.empty_like(Z)
            M[:, 0] = mu
        for k in range(N):
            z = z - dt * _rmul(z, kap) + dW[:, k]
            if has_flow:
                mu = mu + dt * _rmul(mbar - mu, Km) + dB[:, k]
            if (k + 1) % r == 0:
                Z[:, (k + 1) // r] = z
                if has_flow:
                    M[:, (k + 1) // r] = mu
        return PathChunk(np.asarray(indices), Z, M if has_flow else None)

    def chunks(self, chunk_size: Optional[int] = None) -> Iterator[PathChunk]:
        size = chunk_size or self.config.chunk_size
        total = self.config.path_count
        for start in range(0, total, size):
            yield self.simulate(np.arange(start, min(start + size, total)))

    def materialize(self) -> PathChunk:
        return self.simulate(np.arange(self.config.path_count))


def simulate_paths(model: MarketModel, flow: OrderFlowModel, config: SimConfig,
                   record_every: int = 1) -> PathSet:
    """Euler-Maruyama paths of ``dZ = -kappa Z dt + sigma^T dW`` and of the order flow."""
    return PathSet(model, flow, config, record_every)


@dataclass
class StrategyResult:
    """Per-path outcome of one strategy on one chunk (or merged chunks)."""

    wealth: np.ndarray
    q_terminal: np.ndarray
    negative_steps: np.ndarray
    running_penalty: np.ndarray
    trajectories: Optional[dict] = None

    @property
    def repurchased(self) -> np.ndarray:
        return self.negative_steps > 0

    @staticmethod
    def merge(parts: Sequence["StrategyResult"]) -> "StrategyResult":
        return StrategyResult(
            np.concatenate([p.wealth for p in parts]),
            np.concatenate([p.q_terminal for p in parts]),
            np.concatenate([p.negative_steps for p in parts]),
            np.concatenate([p.running_penalty for p in parts]))


def run_strategy(chunk: PathChunk, strategy: SolvedStrategy, model: MarketModel,
                 config: SimConfig, speeds: Optional[np.ndarray] = None,
                 record: bool = False, x0: float = 0.0) -> StrategyResult:
    """Trade one strategy along simulated paths.

    Per step the speed is evaluated at the left end point, then cash accrues
    ``(X P - a nu) . nu dt`` and inventory moves by ``-nu dt``. The impacted
    midprice is ``S + b X^T (Q - Q0) + b_bar M`` with ``M`` the accumulated
    order flow. At the horizon the remaining inventory is marked at the
    midprice and charged ``q' alpha q``.

    Parameters
    ----------
    chunk : PathChunk
        Market paths recorded at every simulation step.
    strategy : SolvedStrategy
    model : MarketModel
        The true market model (may have more assets than the strategy sees).
    speeds : (steps, m) array, optional
        Override the strategy with fixed speeds (used for simple checks).
    record : bool
        Keep full trajectories of S, traded P, Q, nu and cash.
    """
    c = config
    N, dt = c.step_count, c.dt
    if chunk.Z.shape[1] != N + 1:
        raise ValueError("run_strategy needs paths recorded at every step")
    p = chunk.Z.shape[0]
    m = model.m
    X = model.selection
    theta_m = model.theta[:m]
    a = np.asarray(model.a_temp)
    XbX = X @ model.b_perm @ X.T
    Xbb = X @ model.b_bar
    St = sub_covariance(model)
    q0 = np.asarray(c.q0, dtype=float)
    alpha = np.asarray(strategy.spec.alpha_term)
    phi = strategy.spec.phi
    ns = strategy.model.n
    times = np.arange(N) * dt
    kind = strategy.kind
    if speeds is None:
        Kq, Kz, k0, Kmu = strategy.gains(times)
        has_mu = chunk.mu is not None and np.any(Kmu != 0)
        tgt = np.array([strategy.target(t) for t in times]) if not strategy.target.is_zero() else None
    else:
        tgt = None
    tail = kind == "SeriesTail"
    switch = strategy.spec.tau_switch * c.horizon if tail else 0.0

    q = np.tile(q0, (p, 1))
    cash = np.full(p, float(x0))
    pen = np.zeros(p)
    neg = np.zeros((p, m), dtype=np.int64)
    Mcum = np.zeros((p, model.n))
    done = np.zeros((p, m), dtype=bool)
    if record:
        rec = {k: np.empty((p, N + 1, m)) for k in ("S", "P", "Q", "nu")}
        rec["X"] = np.empty((p, N + 1))
    for k in range(N):
        z = chunk.Z[:, k]
        XP = theta_m + z[:, :m] + _rmul(q - q0, XbX) + _rmul(Mcum, Xbb)
        if speeds is not None:
            nu = np.broadcast_to(speeds[k], (p, m)).copy()
        elif tail and c.horizon - times[k] < switch:
            mu_k = None if chunk.mu is None else chunk.mu[:, k, :ns]
            nu = series_tail_speed(q, c.horizon - times[k], z[:, :ns], mu_k, strategy.coeffs)
        else:
            nu = _rmul(q, Kq[k]) + _rmul(z[:, :ns], Kz[k]) + k0[k]
            if has_mu:
                nu += _rmul(chunk.mu[:, k, :ns], Kmu[k])
        if kind == "RL":
            done |= q <= 0
            nu = np.minimum(np.maximum(nu, 0.0), q / dt)
            nu[done] = 0.0
        neg += nu < 0
        dev = q if tgt is None else q - tgt[k]
        pen += phi * np.einsum("pi,ij,pj->p", dev, St, dev) * dt
        if record:
            rec["S"][:, k] = theta_m + z[:, :m]
            rec["P"][:, k] = XP
            rec["Q"][:, k] = q
            rec["nu"][:, k] = nu
            rec["X"][:, k] = cash
        cash += np.einsum("pi,pi->p", XP - _rmul(nu, a), nu) * dt
        q = q - nu * dt
        if chunk.mu is not None:
            Mcum += chunk.mu[:, k] * dt
    zT = chunk.Z[:, N]
    XPT = theta_m + zT[:, :m] + _rmul(q - q0, XbX) + _rmul(Mcum, Xbb)
    wealth = cash + np.einsum("pi,pi->p", XPT, q) - np.einsum("pi,ij,pj->p", q, alpha, q)
    traj = None
    if record:
        rec["S"][:, N] = theta_m + zT[:, :m]
        rec["P"][:, N] = XPT
        rec["Q"][:, N] = q
        rec["nu"][:, N] = np.nan
        rec["X"][:, N] = cash
        rec["t"] = np.linspace(0.0, c.horizon, N + 1)
        traj = rec
    return StrategyResult(wealth, q, neg, pen, traj)


# --------------------------------------------------------------- comparisons

def savings_bps(wealth, wealth_ac) -> np.ndarray:
    """Relative terminal-wealth improvement over AC in basis points."""
    wealth = np.asarray(wealth, dtype=float)
    wealth_ac = np.asarray(wealth_ac, dtype=float)
    return (wealth - wealth_ac) / wealth_ac * 1e4


@dataclass
class SimRun:
    """Results of a Monte Carlo comparison.

    ``results[(phi, kind)]`` holds per-path arrays; :meth:`summary` derives the
    tables.
    """

    config: SimConfig
    phis: List[float]
    kinds: List[str]
    results: Dict[Tuple[float, str], StrategyResult]
    labels: Optional[List[str]] = None

    def savings(self, phi: float, kind: str) -> np.ndarray:
        return savings_bps(self.results[(phi, kind)].wealth, self.results[(phi, "AC")].wealth)

    def summary(self) -> List[dict]:
        """One dict per (phi, strategy) with the headline statistics."""
        rows = []
        steps = self.config.step_count
        for phi in self.phis:
            for kind in self.kinds:
                r = self.results[(phi, kind)]
                sv = self.savings(phi, kind)
                row = {
                    "phi": phi, "strategy": kind,
                    "mean_wealth": float(r.wealth.mean()),
                    "std_wealth": float(r.wealth.std(ddof=1)) if r.wealth.size > 1 else 0.0,
                    "mean_savings_bps": float(sv.mean()),
                    "se_savings_bps": float(sv.std(ddof=1) / np.sqrt(sv.size)) if sv.size > 1 else 0.0,
                    "underperform_pct": float(100.0 * np.mean(sv < 0)),
                    "max_abs_q_terminal": float(np.abs(r.q_terminal).max()),
                }
                for qv, val in zip(QUANTILES, np.quantile(sv, QUANTILES)):
                    row[f"savings_q{int(round(qv * 100)):02d}"] = float(val)
                for i in range(r.negative_steps.shape[1]):
                    row[f"repurchase_paths_pct_{i}"] = float(100.0 * np.mean(r.repurchased[:, i]))
                    row[f"negative_steps_pct_{i}"] = float(100.0 * r.negative_steps[:, i].mean() / steps)
                rows.append(row)
        return rows

    def rows(self) -> List[Tuple[float, str, str, float]]:
        """Long format: ``(phi, strategy, statistic, value)``."""
        out = []
        for row in self.summary():
            for key, val in row.items():
                if key not in ("phi", "strategy"):
                    out.append((row["phi"], row["strategy"], key, val))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phi", "strategy", "statistic", "value"])
            for phi, kind, stat, val in self.rows():
                w.writerow([repr(phi), kind, stat, repr(val)])

    def to_json(self, path) -> None:
        cfg = asdict(self.config)
        with open(path, "w") as fh:
            json.dump({"config": cfg, "summary": self.summary()}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def dump_paths(self, path) -> None:
        """Per-path dump: path, phi, strategy, X_T and repurchase flags."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            m = len(self.config.q0)
            w.writerow(["path", "phi", "strategy", "X_T"] + [f"repurchase_{i}" for i in range(m)])
            for (phi, kind), r in self.results.items():
                for i in range(r.wealth.size):
                    w.writerow([i, repr(phi), kind, repr(float(r.wealth[i]))]
                               + [int(v) for v in r.repurchased[i]])


def compare_strategies(model: MarketModel, flow: OrderFlowModel, config: SimConfig,
                       kinds: Sequence[str], phis: Sequence[float], sigma_ac=None,
                       phi_ac: float = 0.1, tau_switch: float = 0.01,
                       strategy_model: Optional[MarketModel] = None) -> SimRun:
    """Run several strategies and the AC benchmark on common paths for each phi.

    ``strategy_model`` overrides the model the non-benchmark strategies are
    solved with; by default it is the full model, or its traded-asset
    restriction in the partial-information scenario.
    """
    kinds = list(dict.fromkeys(list(kinds) + ["AC"]))
    phis = [float(p) for p in phis]
    m = model.m
    alpha = config.alpha * np.eye(m)
    if strategy_model is None:
        strategy_model = model.restrict(m) if config.scenario == "partial" else model
    sflow = flow.restrict(strategy_model.n)
    solved = {}
    for phi in phis:
        for kind in kinds:
            spec = StrategySpec(kind, phi, alpha, phi_ac=phi_ac, tau_switch=tau_switch)
            solved[(phi, kind)] = build_strategy(spec, strategy_model if kind != "AC" else model,
                                                 config.q0, config.horizon, config.grid_steps,
                                                 sflow, sigma_ac)
    parts: Dict[Tuple[float, str], list] = {key: [] for key in solved}
    for chunk in simulate_paths(model, flow, config).chunks():
        for key, strat in solved.items():
            parts[key].append(run_strategy(chunk, strat, model, config))
    results = {key: StrategyResult.merge(v) for key, v in parts.items()}
    labels = None if model.labels is None else list(model.labels[:m])
    return SimRun(config, phis, kinds, results, labels)
