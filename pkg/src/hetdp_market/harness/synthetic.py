"""Linearly separable synthetic data with a guaranteed margin."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core_types import Dataset, DimensionMismatch, MarginInfeasible


@dataclass(frozen=True)
class SyntheticSpec:
    m: int
    n: int
    rho: float
    w_star: np.ndarray | None = None

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.w_star is not None:
            w = np.asarray(self.w_star, dtype=float).ravel()
            if w.size != self.n:
                raise DimensionMismatch(f"w_star has {w.size} entries for n = {self.n}")
            nrm = np.linalg.norm(w)
            if not nrm > 0:
                raise ValueError("w_star must be non-zero")
            object.__setattr__(self, "w_star", w / nrm)

    def separator(self, gen):
        if self.w_star is not None:
            return self.w_star
        w = gen.standard_normal(self.n)
        return w / np.linalg.norm(w)


def generate_synthetic(spec, rng, return_info=False):
    """Gaussian rows N(0, I/n) pulled into the unit ball, labelled by sign(w*.x).

    Rows with |w*.x| < rho are redrawn; more than 100 m draws in total raise
    MarginInfeasible.
    """
    gen = rng.generator("synthetic")
    w = spec.separator(gen)
    budget = 100 * spec.m
    rows = []
    have = 0
    drawn = 0
    batch = max(spec.m, 64)
    while have < spec.m:
        if drawn >= budget:
            raise MarginInfeasible(f"only {have} of {spec.m} rows reached margin {spec.rho} "
                                   f"after {drawn} draws")
        size = min(batch, budget - drawn)
        z = gen.standard_normal((size, spec.n)) / np.sqrt(spec.n)
        z /= np.maximum(1.0, np.linalg.norm(z, axis=1))[:, None]
        drawn += size
        keep = z[np.abs(z @ w) >= spec.rho]
        rows.append(keep[: spec.m - have])
        have += rows[-1].shape[0]
    X = np.vstack(rows)
    y = np.where(X @ w > 0, 1.0, -1.0)
    D = Dataset(X, y)
    if not np.all(y * (X @ w) >= spec.rho):
        raise MarginInfeasible("separability audit failed")
    if return_info:
        return D, {"w_star": w, "attempts": drawn, "acceptance": spec.m / drawn}
    return D


def misclassification_rate(w, D):
    """Fraction of rows with sign(w.x) != y; a zero score counts as an error."""
    w = np.asarray(getattr(w, "w", w), dtype=float)
    if w.size != D.n:
        raise DimensionMismatch(f"{w.size} weights for {D.n} features")
    return float(np.mean(D.labels * (D.features @ w) <= 0))


def split(D, frac, rng):
    """Seeded disjoint (train, held-out) split with ``frac`` of the rows in train."""
    perm = rng.generator("split").permutation(D.m)
    cut = int(round(frac * D.m))
    return D.subset(np.sort(perm[:cut])), D.subset(np.sort(perm[cut:]))
