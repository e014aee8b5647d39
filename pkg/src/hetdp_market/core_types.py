"""Domain types, dataset normalisation and the seeded randomness contract."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

FEAS_TOL = 1e-6


class MarketError(Exception):
    """Base class for every error raised by the package."""


class InvalidLabels(MarketError):
    pass


class InvalidData(MarketError):
    pass


class DimensionMismatch(MarketError):
    pass


class DegeneratePdf(MarketError):
    pass


class EmptyProfile(MarketError):
    pass


class InvalidEta(MarketError):
    pass


class DegenerateAllocation(MarketError):
    pass


class SolverDiverged(MarketError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class InfeasibleCap(MarketError):
    pass


class NoInteriorSolution(MarketError):
    pass


class NonMonotoneAllocation(MarketError):
    pass


class MarginInfeasible(MarketError):
    pass


def _frozen(x):
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        X = _frozen(self.features)
        y = _frozen(self.labels)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidData("features must be a non-empty m x n matrix")
        if y.shape != (X.shape[0],):
            raise DimensionMismatch(f"{y.size} labels for {X.shape[0]} rows")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise InvalidLabels("labels must be -1 or +1")
        if np.linalg.norm(X, axis=1).max() > 1.0 + 1e-12:
            raise InvalidData("row norms must be at most 1; use normalize_dataset")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def m(self):
        return self.features.shape[0]

    @property
    def n(self):
        return self.features.shape[1]

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.scale)


@dataclass(frozen=True)
class SensitivityProfile:
    c: np.ndarray

    def __post_init__(self):
        c = _frozen(self.c).ravel()
        if c.size == 0:
            raise EmptyProfile("empty sensitivity profile")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise InvalidData("sensitivities must be finite and non-negative")
        object.__setattr__(self, "c", c)

    def __len__(self):
        return self.c.size


@dataclass(frozen=True)
class HyperParams:
    mu: float = 1.0
    sigma: float = 1.0
    gamma: float = 1.0
    lambda_reg: float = 1.0
    k: float = 2.0
    L: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("mu", "sigma", "gamma", "lambda_reg", "k", "L", "beta"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive, got {val}")
        if self.k < 1:
            raise ValueError("k must be at least 1 so the cap k/m admits sum(a) = 1")

    def cap(self, m):
        return self.k / m

    def with_(self, **kw):
        return replace(self, **kw)

    @classmethod
    def thm4_schedule(cls, mu=1.0, **kw):
        """Preset tying the noise weight to the norm weight (sigma = mu**2)."""
        return cls(mu=mu, sigma=mu * mu, **kw)

    def to_dict(self):
        return {k: getattr(self, k) for k in ("mu", "sigma", "gamma", "lambda_reg", "k", "L", "beta")}


@dataclass(frozen=True)
class PrivacyAllocation:
    a: np.ndarray
    eta: float
    epsilon: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen(self.a).ravel())
        object.__setattr__(self, "epsilon", _frozen(self.epsilon).ravel())
        object.__setattr__(self, "eta", float(self.eta))

    @classmethod
    def from_epsilon(cls, eps):
        eps = np.asarray(eps, dtype=float)
        eta = eps.sum()
        if not eta > 0:
            raise DegenerateAllocation("all epsilon are zero")
        return cls(eps / eta, eta, eps)

    @property
    def m(self):
        return self.a.size


@dataclass(frozen=True)
class PaymentSchedule:
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t).ravel())


@dataclass(frozen=True)
class ModelWeights:
    w: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self):
        w = _frozen(self.w).ravel()
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "norm", float(np.linalg.norm(w)))


@dataclass(frozen=True)
class MechanismOutcome:
    allocation: PrivacyAllocation | None
    payments: PaymentSchedule
    weights: ModelWeights
    diagnostics: dict

    def to_json_dict(self):
        alloc = self.allocation
        d = self.diagnostics
        return {
            "allocation": {
                "a": [] if alloc is None else alloc.a.tolist(),
                "eta": 0.0 if alloc is None else alloc.eta,
                "epsilon": [] if alloc is None else alloc.epsilon.tolist(),
            },
            "payments": self.payments.t.tolist(),
            "weights": self.weights.w.tolist(),
            "diagnostics": {
                "delta": d.get("delta"),
                "lambda": d.get("lambda"),
                "proxy_loss": d.get("proxy_loss"),
                "seed": d.get("seed"),
                **{k: v for k, v in d.items() if k not in ("delta", "lambda", "proxy_loss", "seed")},
            },
        }


@dataclass(frozen=True)
class RngSpec:
    """A 64-bit seed; named streams are independent and reproducible."""

    seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", int(self.seed))

    def generator(self, stream):
        key = zlib.crc32(stream.encode("utf-8"))
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(key,)))

    def child(self, index):
        """Derived spec for replicate ``index`` (distinct seeds per replicate)."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(0x7E57, int(index)))
        return RngSpec(int(ss.generate_state(1, np.uint64)[0]))


def normalize_dataset(raw_features, raw_labels):
    """Map labels to {-1, +1} and scale all rows by one global factor into the unit ball.

    Returns a Dataset whose ``scale`` records the divisor that was applied.
    """
    X = np.asarray(raw_features, dtype=float)
    y = np.asarray(raw_labels, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidData("features must be a non-empty m x n matrix")
    if y.size != X.shape[0]:
        raise DimensionMismatch(f"{y.size} labels for {X.shape[0]} rows")
    if not np.all(np.isfinite(X)):
        raise InvalidData("non-finite feature value")
    vals = set(np.unique(y).tolist())
    if vals <= {-1.0, 1.0}:
        y = y.copy()
    elif vals <= {0.0, 1.0}:
        y = np.where(y > 0, 1.0, -1.0)
    else:
        raise InvalidLabels(f"labels must be binary, got {sorted(vals)[:5]}")
    scale = max(1.0, float(np.linalg.norm(X, axis=1).max()))
    Xs = X / scale
    # guard against the last ulp pushing a row past 1
    norms = np.linalg.norm(Xs, axis=1)
    over = norms > 1.0
    if over.any():
        Xs[over] /= norms[over, None]
    return Dataset(Xs, y, scale)


def validate_allocation(alloc, params, m):
    """Per-constraint residuals of an allocation; ``feasible`` is False if any exceeds 1e-6."""
    if alloc.a.size != m or alloc.epsilon.size != m:
        raise DimensionMismatch(f"allocation length {alloc.a.size} for m = {m}")
    a, eps, eta = alloc.a, alloc.epsilon, alloc.eta
    cap = params.cap(m)
    res = {
        "eta": max(0.0, -eta),
        "nonneg": float(max(0.0, -a.min())),
        "simplex": float(abs(a.sum() - 1.0)),
        "cap": float(max(0.0, (a - cap).max())),
        # a_i * eta may sit below the promised eps_i, never above
        "epsilon": float(max(0.0, (a * eta - eps).max())),
        "eps_nonneg": float(max(0.0, -eps.min())),
    }
    res["feasible"] = eta > 0 and all(v <= FEAS_TOL for v in res.values())
    return res
