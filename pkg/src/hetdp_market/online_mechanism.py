"""Posted-cutoff online mechanism for sellers arriving one at a time.

The buyer fixes a cutoff lam~ = sqrt(mu^2 gamma / (sigma m f_Psi(0))) from the
planned number of sellers m, and answers each arrival at once with

    eps~_i = 2 sqrt(3) gamma^{3/2} mu (lam~ - gamma psi(c_i)) / (f^{3/2} m^{3/2} lam~^{7/2})

when gamma psi(c_i) < lam~ and zero otherwise. Decisions depend only on the
seller's own report, never on the data or on other arrivals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import (
    MechanismOutcome,
    ModelWeights,
    PaymentSchedule,
    PrivacyAllocation,
    SensitivityProfile,
    SolverDiverged,
    validate_allocation,
)
from .dp_logreg import fit, privacy_slack
from .gen_bounds import proxy_loss
from .payments import QuadratureConfig, _trapezoid
from .sensitivity import Uniform


@dataclass(frozen=True)
class OnlineConfig:
    m_planned: int
    density_at_zero: float | None = None
    xi: float = 1.0

    def __post_init__(self):
        if self.m_planned < 1:
            raise ValueError("m_planned must be at least 1")
        if self.density_at_zero is not None and not self.density_at_zero > 0:
            raise ValueError("density_at_zero must be positive")
        if not 0 < self.xi <= 1:
            raise ValueError("xi must lie in (0, 1]")

    def density(self, dist):
        """The configured density, defaulting to f_Psi at the bottom of its range."""
        if self.density_at_zero is not None:
            return float(self.density_at_zero)
        f = dist.density_at_floor()
        if not f > 0:
            raise ValueError("f_Psi vanishes at the bottom of its range; set density_at_zero")
        return f


@dataclass(frozen=True)
class SellerDecision:
    epsilon: float
    payment: float

    @property
    def accepted(self):
        return self.epsilon > 0


def cutoff_price(params, cfg, dist=None):
    f = cfg.density_at_zero if dist is None else cfg.density(dist)
    return math.sqrt(params.mu ** 2 * params.gamma / (params.sigma * cfg.m_planned * f))


def _slope(params, cfg, f, lam):
    m = cfg.m_planned
    return 2.0 * math.sqrt(3.0) * params.gamma ** 1.5 * params.mu / (f ** 1.5 * m ** 1.5 * lam ** 3.5)


def online_epsilon(c_i, params, cfg, dist):
    f = cfg.density(dist)
    lam = cutoff_price(params, cfg, dist)
    g = params.gamma * np.asarray(dist.psi(np.asarray(c_i, dtype=float)), dtype=float)
    out = np.where(g < lam, _slope(params, cfg, f, lam) * (lam - np.where(np.isfinite(g), g, lam)), 0.0)
    return out if out.ndim else float(out)


def online_cutoff_report(params, cfg, dist):
    """Report at which gamma psi(z) reaches the cutoff (top of the support if never)."""
    return float(dist.psi_inv(cutoff_price(params, cfg, dist) / params.gamma))


def online_payment(c_i, params, cfg, dist, q=QuadratureConfig()):
    """c_i eps~(c_i) + int_{c_i}^{z_cut} eps~(z) dz by composite trapezoid."""
    z_cut = online_cutoff_report(params, cfg, dist)
    e0 = online_epsilon(c_i, params, cfg, dist)
    if c_i >= z_cut or e0 <= 0:
        return c_i * e0
    zs = np.linspace(c_i, z_cut, q.grid_points)
    return c_i * e0 + _trapezoid(online_epsilon(zs, params, cfg, dist), zs)


def online_payment_uniform(c_i, params, cfg, dist):
    """Closed form of the payment for Uniform(a, b) sensitivities, c_i in [a, b].

    With h(z) = lam~ - gamma (2 z - a) the allocation is K h(z)+, so
    t = c K h(c) + K (h(c)^2 - h(z_cut)^2) / (4 gamma).
    """
    if not isinstance(dist, Uniform):
        raise TypeError("closed form needs a uniform distribution")
    a, b = dist.low, dist.high
    if not a <= c_i <= b:
        raise ValueError("c_i must lie in the support")
    f = cfg.density(dist)
    lam = cutoff_price(params, cfg, dist)
    K = _slope(params, cfg, f, lam)
    gam = params.gamma

    def h(z):
        return lam - gam * (2.0 * z - a)

    if h(c_i) <= 0:
        return 0.0
    z_cut = min(0.5 * (lam / gam + a), b)
    return c_i * K * h(c_i) + K * (h(c_i) ** 2 - h(z_cut) ** 2) / (4.0 * gam)


class OnlineMechanism:
    """Stateful wrapper that answers arrivals in order and keeps the transcript."""

    def __init__(self, params, cfg, dist, q=QuadratureConfig()):
        self.params, self.cfg, self.dist, self.q = params, cfg, dist, q
        self.lam = cutoff_price(params, cfg, dist)
        self.decisions = []

    def decide(self, c_i):
        if len(self.decisions) >= self.cfg.m_planned:
            raise ValueError("more arrivals than planned")
        e = float(online_epsilon(float(c_i), self.params, self.cfg, self.dist))
        t = online_payment(float(c_i), self.params, self.cfg, self.dist, self.q) if e > 0 else 0.0
        d = SellerDecision(e, t)
        self.decisions.append(d)
        return d


def online_allocation(c, params, cfg, dist):
    """Realised allocation of a stream (a renormalised over accepted sellers)."""
    eps = np.asarray(online_epsilon(np.asarray(getattr(c, "c", c), dtype=float), params, cfg, dist))
    return PrivacyAllocation.from_epsilon(eps)


def run_online_mechanism(D, stream, params, cfg, dist, rng, q=QuadratureConfig()):
    c = stream if isinstance(stream, SensitivityProfile) else SensitivityProfile(stream)
    m_real = len(c)
    if m_real > cfg.m_planned:
        raise ValueError("stream is longer than m_planned")
    if D.m != m_real:
        raise ValueError(f"{m_real} arrivals for {D.m} data rows")
    mech = OnlineMechanism(params, cfg, dist, q)
    decisions = [mech.decide(ci) for ci in c.c]
    eps = np.array([d.epsilon for d in decisions])
    t = np.array([d.payment for d in decisions])
    diag = {"lambda": mech.lam, "seed": rng.seed, "m_realized": m_real, "m_planned": cfg.m_planned}
    if not eps.sum() > 0:
        diag.update(delta=privacy_slack(params.k, m_real, params.lambda_reg), proxy_loss=math.inf,
                    degenerate=True, reason="no seller accepted")
        return MechanismOutcome(None, PaymentSchedule(t), ModelWeights(np.zeros(D.n)), diag)
    alloc = PrivacyAllocation.from_epsilon(eps)
    # no cap is imposed online; widen it to what was realised
    k_eff = max(params.k, float(alloc.a.max()) * m_real)
    p_eff = params.with_(k=k_eff)
    check = validate_allocation(alloc, p_eff, m_real)
    diag.update(
        delta=privacy_slack(k_eff, m_real, params.lambda_reg),
        proxy_loss=proxy_loss(c, eps, params.mu, params.sigma, params.gamma, dist),
        k_widened=k_eff,
        feasible=check["feasible"],
        accepted=int((eps > 0).sum()),
    )
    try:
        rep = fit(D, alloc, params.lambda_reg, rng)
        diag["fit_converged"] = True
    except SolverDiverged as exc:
        rep = exc.best
        diag["fit_converged"] = False
    diag.update(fit_iterations=rep.iterations, gradient_norm=rep.gradient_norm)
    return MechanismOutcome(alloc, PaymentSchedule(t), rep.weights, diag)
