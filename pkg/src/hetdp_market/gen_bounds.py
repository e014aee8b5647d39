"""Generalisation-bound constants, the Poisson tail v(t) and its inverse, and the proxy loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import DegenerateAllocation, DimensionMismatch, InvalidEta


@dataclass(frozen=True)
class BoundConfig:
    delta: float = 0.05
    delta_prime: float = 0.05
    beta: float = 1.0
    n: int = 1

    def __post_init__(self):
        if not (0 < self.delta < 1 and 0 < self.delta_prime < 1):
            raise ValueError("delta and delta_prime must lie in (0, 1)")
        if self.delta + self.delta_prime >= 1:
            raise ValueError("delta + delta_prime must be below 1")
        if self.beta < 0 or self.n < 1:
            raise ValueError("beta must be non-negative and n at least 1")


def v(t, n):
    """P(Poisson(t/2) < n) = sum_{i<n} (t/2)^i / i! e^{-t/2}, summed by term recurrence.

    When t/2 < n most of the mass sits below n, so 1 minus the upper tail
    sum_{i>=n} is used instead; it keeps full relative accuracy in 1 - v.
    """
    if t < 0 or n < 1:
        raise ValueError("need t >= 0 and n >= 1")
    h = 0.5 * t
    if h == 0:
        return 1.0
    n = int(n)
    if h < n:
        # terms h^i e^{-h} / i! for i >= n decrease at least geometrically by h / (n + 1)
        term = math.exp(n * math.log(h) - h - math.lgamma(n + 1))
        tail = 0.0
        i = n
        while term > 1e-17 * tail or tail == 0.0:
            tail += term
            i += 1
            term *= h / i
            if term == 0.0:
                break
        return 1.0 - tail
    # work in log space for the leading factor so large t does not underflow early
    log_term = -h
    total = 0.0
    term = 1.0
    for i in range(n):
        if i:
            term *= h / i
        total += term
        if term > 1e250:
            log_term += math.log(total)
            term /= total
            total = 1.0
    return min(1.0, math.exp(log_term + math.log(total)))


def v_inverse(delta_prime, n, tol=0.0):
    """t with v(t, n) = delta_prime, by bisection on [0, t_hi], t_hi doubled until v(t_hi) < delta_prime.

    The default tol = 0 bisects until the bracket is two adjacent floats.
    """
    if not 0 < delta_prime < 1:
        raise ValueError("delta_prime must lie in (0, 1)")
    hi = 1.0
    while v(hi, n) >= delta_prime:
        hi *= 2.0
    lo = 0.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if v(mid, n) > delta_prime:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def mu_constant(cfg):
    return 3.0 * math.log(1.0 / cfg.delta) / math.sqrt(2.0) * math.log1p(math.exp(cfg.beta)) + cfg.beta / math.log(2.0)


def sigma_constant(cfg):
    return (6.0 * math.log(1.0 / cfg.delta) / math.sqrt(2.0) + 1.0) * (2.0 * cfg.beta * v_inverse(cfg.delta_prime, cfg.n))


def excess_risk(a, eta, mu, sigma):
    if not eta > 0:
        raise InvalidEta(f"eta must be positive, got {eta}")
    return mu * float(np.linalg.norm(a)) + sigma / eta


def proxy_loss(c, epsilon, mu, sigma, gamma, dist, strict=False):
    """mu ||a|| + sigma / eta + gamma sum eps_i psi(c_i) with eta = sum eps and a = eps / eta.

    Returns +inf when every epsilon is zero (or raises DegenerateAllocation if ``strict``).
    """
    c = np.asarray(getattr(c, "c", c), dtype=float)
    eps = np.asarray(epsilon, dtype=float)
    if c.shape != eps.shape:
        raise DimensionMismatch("c and epsilon lengths differ")
    eta = eps.sum()
    if not eta > 0:
        if strict:
            raise DegenerateAllocation("all epsilon are zero")
        return math.inf
    psi = dist.psi(c)
    pay = float(np.sum(eps[eps > 0] * psi[eps > 0]))
    return mu * float(np.linalg.norm(eps / eta)) + sigma / eta + gamma * pay


def proxy_loss_g(epsilon, g, mu, sigma):
    """Proxy loss with pre-scaled virtual costs g = gamma * psi(c)."""
    eps = np.asarray(epsilon, dtype=float)
    eta = eps.sum()
    if not eta > 0:
        return math.inf
    pos = eps > 0
    return mu * float(np.linalg.norm(eps / eta)) + sigma / eta + float(np.sum(eps[pos] * g[pos]))
