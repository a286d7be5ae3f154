"""Market-model domain types, validation and JSON serialization.

Prices follow a co-integrated Ornstein-Uhlenbeck process

    dS = kappa (theta - S) dt + sigma^T dW,   Cov(sigma^T dW) = Sigma dt,

observed for ``n`` assets of which the first ``m`` are traded. Time is
measured in trading days of 6.5 hours; shares and currency are raw.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

MODEL_VERSION = "cointexec-model-v1"
PSD_RTOL = 1e-10


class DimensionError(ValueError):
    """Raised when a matrix or vector has the wrong shape.

    Attributes
    ----------
    field : str
        Name of the offending field.
    """

    def __init__(self, field_name: str, expected, got):
        self.field = field_name
        super().__init__(f"{field_name}: expected shape {expected}, got {got}")


class ModelValidationError(ValueError):
    """Raised when a model or penalty violates a hard precondition."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__(report.summary())


def _frozen(x, shape, name) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.shape != tuple(shape):
        raise DimensionError(name, tuple(shape), arr.shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    arr.setflags(write=False)
    return arr


def selection_matrix(m: int, n: int) -> np.ndarray:
    """The m x n matrix picking the first ``m`` coordinates of an n-vector."""
    X = np.zeros((m, n))
    X[np.arange(m), np.arange(m)] = 1.0
    return X


def clamp_psd(S: np.ndarray, rtol: float = PSD_RTOL) -> np.ndarray:
    """Symmetrize ``S`` and clamp tiny negative eigenvalues to zero.

    Raises
    ------
    ValueError
        If an eigenvalue is below ``-rtol * ||S||``.
    """
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    tol = rtol * max(np.linalg.norm(S, 2), 1e-300)
    if w.size and w.min() < -tol:
        raise ValueError(f"matrix is not PSD: smallest eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return (V * w) @ V.T


@dataclass(frozen=True)
class MarketModel:
    """Continuous-time co-integrated price model with linear price impact.

    Parameters
    ----------
    kappa : (n, n) array
        Mean-reversion matrix (1/time).
    theta : (n,) array
        Mean-reversion levels.
    sigma_cov : (n, n) array
        Instantaneous covariance Sigma.
    a_temp : (m, m) array
        Temporary impact of the traded assets.
    b_perm : (n, n) array, optional
        Permanent impact of the agent's own trading. Defaults to zero.
    b_bar : (n, n) array, optional
        Permanent impact of other participants' order flow. Defaults to zero.
    labels : sequence of str, optional
        Asset names, informational only.
    """

    kappa: np.ndarray
    theta: np.ndarray
    sigma_cov: np.ndarray
    a_temp: np.ndarray
    b_perm: Optional[np.ndarray] = None
    b_bar: Optional[np.ndarray] = None
    labels: Optional[tuple] = None

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if theta.ndim != 1:
            raise DimensionError("theta", "(n,)", theta.shape)
        n = theta.size
        a = np.atleast_2d(np.asarray(self.a_temp, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError("a_temp", "(m, m)", a.shape)
        m = a.shape[0]
        if m > n or m < 1:
            raise DimensionError("a_temp", f"(m, m) with 1 <= m <= {n}", a.shape)
        set_ = object.__setattr__
        set_(self, "theta", _frozen(theta, (n,), "theta"))
        set_(self, "a_temp", _frozen(a, (m, m), "a_temp"))
        set_(self, "kappa", _frozen(np.atleast_2d(self.kappa), (n, n), "kappa"))
        set_(self, "sigma_cov", _frozen(np.atleast_2d(self.sigma_cov), (n, n), "sigma_cov"))
        for name in ("b_perm", "b_bar"):
            val = getattr(self, name)
            val = np.zeros((n, n)) if val is None else np.atleast_2d(val)
            set_(self, name, _frozen(val, (n, n), name))
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != n:
                raise DimensionError("labels", (n,), (len(labels),))
            set_(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.theta.size

    @property
    def m(self) -> int:
        return self.a_temp.shape[0]

    @property
    def selection(self) -> np.ndarray:
        return selection_matrix(self.m, self.n)

    def sigma_psd(self) -> np.ndarray:
        """Sigma symmetrized and clamped to the PSD cone."""
        return clamp_psd(np.array(self.sigma_cov))

    def replace(self, **changes) -> "MarketModel":
        kw = dict(kappa=self.kappa, theta=self.theta, sigma_cov=self.sigma_cov,
                  a_temp=self.a_temp, b_perm=self.b_perm, b_bar=self.b_bar,
                  labels=self.labels)
        kw.update(changes)
        return MarketModel(**kw)

    def restrict(self, k: Optional[int] = None) -> "MarketModel":
        """Keep only the first ``k`` assets (default: the traded ones)."""
        k = self.m if k is None else k
        if not self.m <= k <= self.n:
            raise ValueError(f"cannot restrict to {k} assets with m={self.m}, n={self.n}")
        sl = slice(0, k)
        return MarketModel(
            kappa=self.kappa[sl, sl], theta=self.theta[sl], sigma_cov=self.sigma_cov[sl, sl],
            a_temp=self.a_temp, b_perm=self.b_perm[sl, sl], b_bar=self.b_bar[sl, sl],
            labels=None if self.labels is None else self.labels[:k])

    def ac_reduction(self, sigma_ac: Optional[np.ndarray] = None) -> "MarketModel":
        """Model seen by the Almgren-Chriss benchmark.

        Only the traded assets, no mean reversion, no order-flow impact, and
        covariance ``sigma_ac`` (defaults to the traded sub-block of Sigma).
        """
        m = self.m
        S = sub_covariance(self) if sigma_ac is None else np.asarray(sigma_ac, dtype=float)
        return MarketModel(kappa=np.zeros((m, m)), theta=self.theta[:m], sigma_cov=S,
                           a_temp=self.a_temp, b_perm=self.b_perm[:m, :m],
                           b_bar=np.zeros((m, m)),
                           labels=None if self.labels is None else self.labels[:m])


def sub_covariance(model: MarketModel) -> np.ndarray:
    """Traded-asset sub-covariance X Sigma X^T."""
    X = model.selection
    return X @ np.asarray(model.sigma_cov) @ X.T


@dataclass(frozen=True)
class PenaltySpec:
    """Running and terminal inventory penalties.

    Parameters
    ----------
    phi : float
        Running penalty on deviations from the inventory target.
    alpha_term : (m, m) array
        Terminal penalty on remaining inventory.
    """

    phi: float
    alpha_term: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.phi) or self.phi < 0:
            raise ValueError(f"phi must be a nonnegative number, got {self.phi}")
        a = np.atleast_2d(np.asarray(self.alpha_term, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError("alpha_term", "(m, m)", a.shape)
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "alpha_term", _frozen(a, a.shape, "alpha_term"))

    @classmethod
    def isotropic(cls, phi: float, alpha: float, m: int) -> "PenaltySpec":
        return cls(phi, alpha * np.eye(m))

    def sigma_tilde(self, model: MarketModel) -> np.ndarray:
        return sub_covariance(model)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    min_eigenvalue: Optional[float] = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate_model`, one entry per invariant."""

    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            eig = "" if c.min_eigenvalue is None else f" (min eig {c.min_eigenvalue:.6g})"
            lines.append(f"{'ok  ' if c.passed else 'FAIL'} {c.name}{eig} {c.detail}".rstrip())
        return "\n".join(lines)

    def raise_if_failed(self):
        if not self.passed:
            raise ModelValidationError(self)


def _min_eig(S) -> float:
    return float(np.linalg.eigvalsh(0.5 * (S + S.T)).min())


def validate_model(model: MarketModel, penalty: PenaltySpec) -> ValidationReport:
    """Check every model and penalty invariant.

    The key check is that ``alpha - 1/2 X b X^T`` is positive definite, which
    guarantees a bounded Riccati solution on the whole horizon.

    Raises
    ------
    DimensionError
        If the penalty size does not match the number of traded assets.
    """
    m, n = model.m, model.n
    if penalty.alpha_term.shape != (m, m):
        raise DimensionError("alpha_term", (m, m), penalty.alpha_term.shape)
    checks = []
    a = model.a_temp
    ea = _min_eig(a)
    checks.append(CheckResult("a_temp symmetric positive definite",
                              bool(np.allclose(a, a.T, rtol=0, atol=1e-12 * np.abs(a).max())) and ea > 0,
                              ea))
    S = model.sigma_cov
    es = _min_eig(S)
    tol = PSD_RTOL * max(np.linalg.norm(S, 2), 1e-300)
    sym = bool(np.allclose(S, S.T, rtol=0, atol=1e-12 * max(np.abs(S).max(), 1e-300)))
    checks.append(CheckResult("sigma_cov symmetric", sym, detail="" if sym else
                              f"max asymmetry {np.abs(S - S.T).max():.3g}"))
    checks.append(CheckResult("sigma_cov positive semidefinite", es >= -tol, es))
    b = model.b_perm
    checks.append(CheckResult("b_perm symmetric",
                              bool(np.allclose(b, b.T, rtol=0, atol=1e-12 * max(np.abs(b).max(), 1e-300)))))
    X = model.selection
    checks.append(CheckResult("selection structure", bool(np.array_equal(X @ X.T, np.eye(m)))))
    checks.append(CheckResult("phi nonnegative", penalty.phi >= 0))
    K = penalty.alpha_term - 0.5 * X @ b @ X.T
    ek = _min_eig(K)
    checks.append(CheckResult("alpha - 1/2 X b X^T positive definite", ek > 0, ek))
    return ValidationReport(tuple(checks))


class InventoryTarget:
    """Deterministic inventory schedule t -> Q_t on [0, T].

    Parameters
    ----------
    schedule : callable
        Maps a scalar time to an m-vector.
    q0 : (m,) array
    horizon : float
    """

    def __init__(self, schedule: Callable[[float], np.ndarray], q0, horizon: float):
        self.schedule = schedule
        self.q0 = np.asarray(q0, dtype=float)
        self.q0.setflags(write=False)
        self.horizon = float(horizon)

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.schedule(t), dtype=float)

    @property
    def m(self) -> int:
        return self.q0.size

    def is_zero(self) -> bool:
        return getattr(self, "_zero", False)

    def endpoints_ok(self, tol: float = 1e-9) -> bool:
        """Whether Q_0 = q0 and Q_T = 0 to ``tol`` relative to |q0|."""
        scale = max(np.abs(self.q0).max(), 1.0)
        return (np.abs(self(0.0) - self.q0).max() <= tol * scale
                and np.abs(self(self.horizon)).max() <= tol * scale)

    @classmethod
    def zero(cls, q0, horizon: float) -> "InventoryTarget":
        """The identically-zero target (no running inventory anchor)."""
        q0 = np.asarray(q0, dtype=float)
        out = cls(lambda t: np.zeros_like(q0), q0, horizon)
        out._zero = True
        return out

    @classmethod
    def linear(cls, q0, horizon: float) -> "InventoryTarget":
        q0 = np.asarray(q0, dtype=float)
        return cls(lambda t: q0 * (1.0 - t / horizon), q0, horizon)

    @classmethod
    def from_grid(cls, times, values) -> "InventoryTarget":
        """Piecewise-linear interpolation of a schedule sampled on a grid."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)

        def sched(t):
            return np.array([np.interp(t, times, values[:, i]) for i in range(values.shape[1])])

        out = cls(sched, values[0], times[-1])
        out.grid = (times, values)
        return out


@dataclass(frozen=True)
class OrderFlowModel:
    """Order flow of other participants, either zero or an affine OU process.

    For the OU kind, ``d mu = K (mu_bar - mu) dt + chol(Sigma_mu) dW`` so that
    ``E[mu_u | mu_t] = alpha(t; u) + beta(t; u) mu_t`` with
    ``beta = exp(-K (u - t))`` and ``alpha = (I - beta) mu_bar``.
    """

    kind: str = "zero"
    n: int = 0
    mean_reversion: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    diffusion_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("zero", "affine_ou"):
            raise ValueError(f"unknown order-flow kind {self.kind!r}")
        n = self.n
        set_ = object.__setattr__
        if self.kind == "zero":
            set_(self, "mean_reversion", _frozen(np.zeros((n, n)), (n, n), "mean_reversion"))
            set_(self, "mean", _frozen(np.zeros(n), (n,), "mean"))
            set_(self, "diffusion_cov", _frozen(np.zeros((n, n)), (n, n), "diffusion_cov"))
        else:
            set_(self, "mean_reversion", _frozen(np.atleast_2d(self.mean_reversion), (n, n), "mean_reversion"))
            set_(self, "mean", _frozen(np.atleast_1d(self.mean), (n,), "mean"))
            dc = np.zeros((n, n)) if self.diffusion_cov is None else np.atleast_2d(self.diffusion_cov)
            set_(self, "diffusion_cov", _frozen(dc, (n, n), "diffusion_cov"))

    @classmethod
    def zero_flow(cls, n: int) -> "OrderFlowModel":
        return cls("zero", n)

    @classmethod
    def affine_ou(cls, mean_reversion, mean, diffusion_cov=None) -> "OrderFlowModel":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls("affine_ou", mean.size, mean_reversion, mean, diffusion_cov)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def restrict(self, k: int) -> "OrderFlowModel":
        """Flow of the first ``k`` assets only."""
        if self.is_zero:
            return OrderFlowModel.zero_flow(k)
        sl = slice(0, k)
        return OrderFlowModel.affine_ou(self.mean_reversion[sl, sl], self.mean[sl],
                                        self.diffusion_cov[sl, sl])

    def conditional_mean_coeffs(self, t: float, u: float):
        """Return ``(alpha, beta)`` with ``E[mu_u | mu_t] = alpha + beta mu_t``."""
        from scipy.linalg import expm

        n = self.n
        if self.is_zero:
            return np.zeros(n), np.zeros((n, n))
        beta = expm(-np.asarray(self.mean_reversion) * (u - t))
        return (np.eye(n) - beta) @ self.mean, beta


# ---------------------------------------------------------------- serialization

def _tolist(x):
    return np.asarray(x).tolist()


def model_to_dict(model: MarketModel, penalty: Optional[PenaltySpec] = None,
                  sigma_ac: Optional[np.ndarray] = None) -> dict:
    """Flat JSON-ready dictionary of a model and optional penalty."""
    d = {
        "version": MODEL_VERSION,
        "n": model.n,
        "m": model.m,
        "kappa": _tolist(model.kappa),
        "theta": _tolist(model.theta),
        "sigma_cov": _tolist(model.sigma_cov),
        "b_perm": _tolist(model.b_perm),
        "b_bar": _tolist(model.b_bar),
        "a_temp": _tolist(model.a_temp),
        "selection": _tolist(model.selection),
    }
    if penalty is not None:
        d["phi"] = penalty.phi
        d["alpha_term"] = _tolist(penalty.alpha_term)
        d["sigma_tilde"] = _tolist(sub_covariance(model))
    if model.labels is not None:
        d["labels"] = list(model.labels)
    if sigma_ac is not None:
        d["sigma_ac"] = _tolist(sigma_ac)
    return d


def model_from_dict(d: dict):
    """Inverse of :func:`model_to_dict`.

    Returns
    -------
    model : MarketModel
    penalty : PenaltySpec or None
    sigma_ac : ndarray or None
    """
    if d.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')!r}, expected {MODEL_VERSION}")
    try:
        model = MarketModel(kappa=d["kappa"], theta=d["theta"], sigma_cov=d["sigma_cov"],
                            a_temp=d["a_temp"], b_perm=d.get("b_perm"), b_bar=d.get("b_bar"),
                            labels=d.get("labels"))
    except KeyError as exc:
        raise ValueError(f"model JSON is missing field {exc.args[0]!r}") from None
    if int(d.get("n", model.n)) != model.n:
        raise DimensionError("n", model.n, d["n"])
    if int(d.get("m", model.m)) != model.m:
        raise DimensionError("m", model.m, d["m"])
    if "selection" in d and not np.array_equal(np.asarray(d["selection"], dtype=float), model.selection):
        raise ValueError("selection: must pick the first m coordinates")
    penalty = None
    if "alpha_term" in d:
        penalty = PenaltySpec(d.get("phi", 0.0), d["alpha_term"])
    sigma_ac = None if d.get("sigma_ac") is None else np.asarray(d["sigma_ac"], dtype=float)
    return model, penalty, sigma_ac


def save_model(path, model, penalty=None, sigma_ac=None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, penalty, sigma_ac), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def nasdaq_model(symmetrize: bool = True):
    """Calibrated five-asset model (INTC, SMH, AMAT, AMD, ORCL) shipped with the package.

    Returns
    -------
    model : MarketModel
    sigma_ac : (2, 2) ndarray
        Diffusion-only covariance of the two traded assets.
    """
    from importlib import resources

    with resources.files("cointexec.data").joinpath("nasdaq_2014.json").open() as fh:
        d = json.load(fh)
    model, _, sigma_ac = model_from_dict(d)
    if symmetrize:
        S = np.asarray(model.sigma_cov)
        model = model.replace(sigma_cov=0.5 * (S + S.T))
    return model, sigma_ac
