"""Payments from the allocation curve, and IC / IR / expected-payment audits.

For a non-increasing allocation curve eps_i(z) in the seller's report z, the
payment that makes truthful reporting optimal is

    t_i(z) = z eps_i(z) + int_z^{z_cut} eps_i(s) ds,

where z_cut is the report beyond which the seller receives nothing. The
integral is a composite trapezoid on a uniform grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import NonMonotoneAllocation, RngSpec, SensitivityProfile
from .offline_mechanism import (
    cutoff_report,
    epsilon_curve,
    scaled_costs,
    solve_allocation,
)

MONO_TOL = 1e-9


@dataclass(frozen=True)
class QuadratureConfig:
    grid_points: int = 256
    z_max_policy: str | float = "cutoff-detect"
    tolerance: float = 1e-12

    def __post_init__(self):
        if self.grid_points < 8:
            raise ValueError("grid_points must be at least 8")
        if not (self.z_max_policy == "cutoff-detect" or isinstance(self.z_max_policy, (int, float))):
            raise ValueError("z_max_policy must be 'cutoff-detect' or a number")


@dataclass(frozen=True)
class ICAuditReport:
    violation: np.ndarray
    worst_ir: float
    misreports: np.ndarray
    scale: float

    @property
    def worst_violation(self):
        return float(self.violation.max())


def _trapezoid(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def _check_monotone(eps):
    rise = np.diff(eps).max() if eps.size > 1 else 0.0
    if rise > MONO_TOL:
        raise NonMonotoneAllocation(f"allocation increases by {rise:.3e} with the report")


def payment_for_seller(eps_fn, c_i, q=QuadratureConfig(), z_upper=None):
    """c_i eps(c_i) + int_{c_i}^{z_max} eps(z) dz for a vectorised curve ``eps_fn``.

    With cutoff detection, z_max is the first point of a scan over
    [c_i, z_upper] where eps falls below the tolerance; otherwise the fixed
    bound from the config.
    """
    if isinstance(q.z_max_policy, str):
        if z_upper is None:
            raise ValueError("cutoff detection needs z_upper")
        scan = np.linspace(c_i, max(z_upper, c_i), q.grid_points)
        e = np.asarray(eps_fn(scan), dtype=float)
        _check_monotone(e)
        below = np.nonzero(e < q.tolerance)[0]
        z_max = scan[below[0]] if below.size else scan[-1]
    else:
        z_max = float(q.z_max_policy)
    e0 = float(np.asarray(eps_fn(np.array([c_i])))[0])
    if z_max <= c_i:
        return c_i * e0
    zs = np.linspace(c_i, z_max, q.grid_points)
    e = np.asarray(eps_fn(zs), dtype=float)
    _check_monotone(e)
    return c_i * e[0] + _trapezoid(e, zs)


def robust_cutoff(c, i, params, dist, probes=64):
    """Analytic cutoff report, confirmed by probing the curve above it.

    If a probe above the analytic cutoff is still bought (possible when the
    loss has several local minima), the cutoff is moved to the last bought
    probe and refined by bisection.
    """
    z_cut = cutoff_report(c, i, params, dist)
    top = dist.upper
    if z_cut >= top:
        return top
    zs = np.linspace(z_cut, top, probes)[1:]
    e = epsilon_curve(c, i, zs, params, dist)
    pos = np.nonzero(e > 0)[0]
    if pos.size == 0:
        return z_cut
    lo = zs[pos[-1]]
    hi = zs[pos[-1] + 1] if pos[-1] + 1 < zs.size else top
    if hi == lo:
        return top
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if epsilon_curve(c, i, [mid], params, dist)[0] > 0:
            lo = mid
        else:
            hi = mid
    return hi


class SellerView:
    """The mechanism as seen by seller i: report z -> (eps_i(z), t_i(z)), others fixed."""

    def __init__(self, c, i, params, dist, q=QuadratureConfig()):
        self.c = np.asarray(getattr(c, "c", c), dtype=float)
        self.i = i
        self.params = params
        self.dist = dist
        self.q = q
        if isinstance(q.z_max_policy, str):
            self.z_cut = robust_cutoff(self.c, i, params, dist)
        else:
            self.z_cut = float(q.z_max_policy)

    def eps(self, zs):
        return epsilon_curve(self.c, self.i, np.atleast_1d(zs), self.params, self.dist)

    def __call__(self, z):
        z = float(z)
        if z >= self.z_cut:
            e = float(self.eps(z)[0])
            return e, z * e
        zs = np.linspace(z, self.z_cut, self.q.grid_points)
        e = self.eps(zs)
        _check_monotone(e)
        return float(e[0]), z * e[0] + _trapezoid(e, zs)


def seller_payment(c, i, params, dist, q=QuadratureConfig()):
    """Payment to seller i at its own report."""
    c = np.asarray(getattr(c, "c", c), dtype=float)
    return SellerView(c, i, params, dist, q)(c[i])[1]


def payment_self_check(c, i, params, dist, q=QuadratureConfig()):
    """Relative change of seller i's payment when the quadrature grid is doubled."""
    t1 = seller_payment(c, i, params, dist, q)
    q2 = QuadratureConfig(2 * q.grid_points, q.z_max_policy, q.tolerance)
    t2 = seller_payment(c, i, params, dist, q2)
    return abs(t2 - t1) / t2 if t2 > 0 else abs(t1)


def audit_ic(mechanism, c_i, misreports):
    """max over misreports of COST(truth) - COST(misreport), with COST = c_i eps - t."""
    e0, t0 = mechanism(c_i)
    truth = c_i * e0 - t0
    best = min(c_i * e - t for e, t in (mechanism(z) for z in misreports))
    return truth - best


def audit_ir(mechanism, c_i):
    """COST at the truthful report; individual rationality needs this <= 0."""
    e0, t0 = mechanism(c_i)
    return c_i * e0 - t0


def audit_mechanism(c, params, dist, q=QuadratureConfig(), n_misreports=64, z_max=None):
    """IC and IR audit of every seller on a shared misreport grid over [0, z_max]."""
    c = np.asarray(getattr(c, "c", c), dtype=float)
    m = c.size
    z_max = dist.upper if z_max is None else z_max
    grid = np.linspace(0.0, z_max, n_misreports)
    viol = np.zeros(m)
    ir = np.zeros(m)
    base = solve_allocation(c, params, dist).allocation.epsilon
    for i in range(m):
        view = SellerView(c, i, params, dist, q)
        viol[i] = audit_ic(view, c[i], grid)
        ir[i] = audit_ir(view, c[i])
    scale = float(np.max(c * base))
    return ICAuditReport(viol, float(ir.max()), grid, scale)


def payment_identity_check(dist, params, m, draws, rng, q=QuadratureConfig(), return_sums=False):
    """Monte-Carlo relative gap between E[sum t_i] and E[sum eps_i psi(c_i)]."""
    if draws < 1:
        raise ValueError("draws must be positive")
    gen = rng.generator("sensitivities")
    lhs = np.zeros(draws)
    rhs = np.zeros(draws)
    for d in range(draws):
        c = dist._draw(gen, m)
        try:
            eps = solve_allocation(c, params, dist).allocation.epsilon
        except Exception:
            continue
        psi = dist.psi(c)
        rhs[d] = float(np.sum(eps[eps > 0] * psi[eps > 0]))
        lhs[d] = sum(seller_payment(c, i, params, dist, q) for i in np.nonzero(eps > 0)[0])
    L, R = lhs.mean(), rhs.mean()
    gap = 0.0 if R == 0 and L == 0 else abs(L - R) / R
    if return_sums:
        return gap, lhs, rhs
    return gap


def virtual_payments(c, epsilon, params, dist):
    """sum eps_i psi(c_i): the expected payment implied by the allocation."""
    psi = dist.psi(np.asarray(getattr(c, "c", c), dtype=float))
    eps = np.asarray(epsilon, dtype=float)
    pos = eps > 0
    return float(np.sum(eps[pos] * psi[pos]))
