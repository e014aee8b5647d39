"""Joint choice of model weights and privacy weights when payments may depend on the data.

For a fixed average budget eps_avg (eta = m * eps_avg) the objective

    sum_i a_i l_i(w) + 2 b.w / eta + (Lambda/2) ||w||^2
        + mu ||a||^2 + sigma / eta + gamma eta sum_i a_i psi(c_i)

is jointly convex in (w, a) when 2 Lambda mu > m. It is minimised by
alternating projected gradient steps on w and a, and eta by a line search
over a log grid of eps_avg.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _kernels
from .core_types import InfeasibleCap, ModelWeights
from .dp_logreg import sample_noise

ARMIJO = 1e-4
STALL_ITERS = 10
# relative decrease per STALL_ITERS window below which the solver stops
STALL_REL = 1e-12


@dataclass(frozen=True)
class JointSolution:
    weights: ModelWeights
    a: np.ndarray
    eps_avg: float
    objective: float
    convexity_margin: float
    eta: float
    iterations: int
    converged: bool
    grid: np.ndarray
    grid_objectives: np.ndarray
    # largest final stationarity residual over the grid
    max_residual: float = 0.0
    # payments built from a depend on the training data
    privacy_leak_caveat: bool = True

    @property
    def epsilon(self):
        return self.a * self.eta


def convexity_margin(params, m):
    return 2.0 * params.lambda_reg * params.mu - m


def raw_noise(noise):
    """The unscaled noise b behind b' = 2 b / eta."""
    return noise.b_prime * noise.eta_used / 2.0


def _psi(c, dist):
    return np.atleast_1d(dist.psi(np.asarray(getattr(c, "c", c), dtype=float)))


def _accept(f, fn, slope, d2, t, slack):
    """Backtracking test: the quadratic upper bound with curvature 1/t holds at the trial point.

    This implies the Armijo condition with constant 1/2 (so also ARMIJO) and,
    unlike Armijo alone, rejects steps near 2/L that only oscillate.
    """
    if t < 1e-20:
        return True
    return fn <= f + slope + d2 / (2.0 * t) + slack and fn <= f - ARMIJO * d2 / t + slack


def _first_step(curv):
    """First step of the halving sequence 1, 1/2, ... that the test can accept.

    The w block is lambda_reg-strongly convex and the a block is quadratic
    with curvature 2 mu, so any step t with t * curv > 1 violates the
    quadratic bound and is skipped without evaluating it.
    """
    t = 1.0
    while t * curv > 1.0:
        t *= 0.5
    return t


class _Problem:
    """Objective pieces for fixed data, costs and noise."""

    def __init__(self, D, psi, b, params, naive=False, gamma=None):
        self.X = D.features
        self.y = D.labels
        self.psi = psi
        self.fin = np.isfinite(psi)
        self.psi0 = np.where(self.fin, psi, 0.0)
        self.b = b
        self.p = params
        # the naive model drops both excess-risk terms
        self.mu = 0.0 if naive else params.mu
        self.sigma = 0.0 if naive else params.sigma
        self.gamma = params.gamma if gamma is None else float(gamma)
        self.m = D.m
        self.cap = params.cap(D.m)
        if self.cap * self.fin.sum() < 1.0 - 1e-12:
            raise InfeasibleCap("not enough finite-cost sellers to satisfy the cap")

    def losses(self, w):
        return np.logaddexp(0.0, -self.y * (self.X @ w))

    def _value(self, w, a, loss, eta):
        p = self.p
        return float(a @ loss + 2.0 * (self.b @ w) / eta + 0.5 * p.lambda_reg * (w @ w)
                     + self.mu * (a @ a) + self.sigma / eta + self.gamma * eta * (a @ self.psi0))

    def value(self, w, a, eta):
        return self._value(w, a, self.losses(w), eta)

    def _grad_w(self, w, a, z, eta):
        coef = -a * self.y * expit(-self.y * z)
        return self.X.T @ coef + 2.0 * self.b / eta + self.p.lambda_reg * w

    def grad_w(self, w, a, eta):
        return self._grad_w(w, a, self.X @ w, eta)

    def _grad_a(self, a, loss, eta):
        return loss + 2.0 * self.mu * a + self.gamma * eta * self.psi0

    def grad_a(self, w, a, eta):
        return self._grad_a(a, self.losses(w), eta)

    def project(self, a):
        if self.fin.all():
            return _kernels.project_capped_simplex(a, self.cap)
        out = np.zeros_like(a)
        out[self.fin] = _kernels.project_capped_simplex(a[self.fin], self.cap)
        return out

    def _residual(self, gw, a, ga):
        pa = a - self.project(a - ga)
        return math.sqrt(gw @ gw + pa @ pa)

    def stationarity(self, w, a, eta):
        return self._residual(self.grad_w(w, a, eta), a, self.grad_a(w, a, eta))

    def solve(self, eta, w0, a0, tol=1e-8, maxiter=100000, trace=None):
        """Alternating projected gradient with backtracking from step 1 in each block."""
        w = np.asarray(w0, dtype=float).copy()
        a = self.project(np.asarray(a0, dtype=float))
        # margins X w and losses are carried along so trial steps avoid X @ w
        z = self.X @ w
        loss = np.logaddexp(0.0, -self.y * z)
        f = self._value(w, a, loss, eta)
        if trace is not None:
            trace.append(f)
        it = 0
        gw = self._grad_w(w, a, z, eta)
        res = self._residual(gw, a, self._grad_a(a, loss, eta))
        # relative to the starting residual, as for the private fit
        tol = tol * max(1.0, res)
        f_ref, stall = f, 0
        while res >= tol and it < maxiter:
            it += 1
            gn2 = gw @ gw
            dz = self.X @ gw
            # slack of a few ulps so progress continues below the resolution of f
            slack = 4e-16 * max(1.0, abs(f))
            t = _first_step(self.p.lambda_reg)
            while True:
                zn = z - t * dz
                ln = np.logaddexp(0.0, -self.y * zn)
                wn = w - t * gw
                fn = self._value(wn, a, ln, eta)
                if _accept(f, fn, -t * gn2, t * t * gn2, t, slack):
                    break
                t *= 0.5
            w_moved = t >= 1e-20 and fn <= f + slack
            if w_moved:
                w, z, loss, f = wn, zn, ln, fn
            ga = self._grad_a(a, loss, eta)
            t = _first_step(2.0 * self.mu)
            while True:
                an = self.project(a - t * ga)
                d = an - a
                fn = self._value(w, an, loss, eta)
                if _accept(f, fn, ga @ d, d @ d, t, slack):
                    break
                t *= 0.5
            a_moved = t >= 1e-20 and fn <= f + slack
            if a_moved:
                a, f = an, fn
            if trace is not None:
                trace.append(f)
            gw = self._grad_w(w, a, z, eta)
            res = self._residual(gw, a, self._grad_a(a, loss, eta))
            if f < f_ref - max(4.0 * slack, STALL_REL * abs(f_ref)):
                f_ref, stall = f, 0
            else:
                stall += 1
            if not (w_moved or a_moved) or stall >= STALL_ITERS:
                # no representable decrease left
                break
        self.last_residual = res
        return w, a, f, it, res < tol


def joint_objective(D, w, a, eps_avg, noise, params, c, dist):
    if not eps_avg > 0:
        return math.inf
    prob = _Problem(D, _psi(c, dist), raw_noise(noise), params)
    return prob.value(np.asarray(w, dtype=float), np.asarray(a, dtype=float), D.m * eps_avg)


def joint_gradient(D, w, a, eps_avg, noise, params, c, dist):
    """(d/dw, d/da) of the joint objective."""
    prob = _Problem(D, _psi(c, dist), raw_noise(noise), params)
    w = np.asarray(w, dtype=float)
    a = np.asarray(a, dtype=float)
    eta = D.m * eps_avg
    return prob.grad_w(w, a, eta), prob.grad_a(w, a, eta)


def eps_avg_grid(L, points=50):
    return np.geomspace(1e-4 * L, L, points)


def draw_joint_noise(n, rng):
    # unscaled b; sample_noise returns 2 b / eta, so eta = 2 gives b itself
    return sample_noise(n, 2.0, rng)


def fit_joint(D, c, params, dist, rng, grid=None, init=None, tol=1e-8, maxiter=100000, noise=None,
              naive=False, gamma=None):
    """Grid search over eps_avg of the alternating solver; noise is drawn once per call.

    ``init`` is an optional (w0, a0) pair used at the first grid point;
    later grid points warm start from the previous solution. ``naive``
    solves the same objective with mu = sigma = 0; ``gamma`` overrides the
    payment weight (0 drops the payment term).
    """
    m = D.m
    margin = -float(m) if naive else convexity_margin(params, m)
    if margin <= 0 and not naive:
        warnings.warn(f"2 Lambda mu - m = {margin:.3g} <= 0: the joint objective may be non-convex",
                      RuntimeWarning, stacklevel=2)
    noise = noise or draw_joint_noise(D.n, rng)
    prob = _Problem(D, _psi(c, dist), raw_noise(noise), params, naive, gamma)
    grid = eps_avg_grid(params.L) if grid is None else np.asarray(grid, dtype=float)
    if init is None:
        w, a = np.zeros(D.n), np.full(m, 1.0 / m)
    else:
        w, a = init
    vals = np.empty(grid.size)
    best = None
    total = 0
    all_ok = True
    worst = 0.0
    for j, e in enumerate(grid):
        w, a, f, it, ok = prob.solve(m * e, w, a, tol, maxiter)
        total += it
        all_ok &= ok
        worst = max(worst, prob.last_residual)
        vals[j] = f
        if best is None or f < best[0]:
            best = (f, e, w.copy(), a.copy())
    f, e, w, a = best
    return JointSolution(ModelWeights(w), a, float(e), float(f), margin, float(m * e), total,
                         bool(all_ok), grid, vals, float(worst))


def linear_convergence_probe(D, c, params, dist, eps_avg, rng, iters=200, init=None, noise=None):
    """Objective gaps f_t - f* of the alternating solver and the fitted per-step contraction.

    f* comes from running the same solver to convergence. The rate is
    exp of the least-squares slope of log(gap) against the iteration count;
    raising that line's intercept to the largest residual gives an affine
    upper bound on every logged gap.
    """
    noise = noise or draw_joint_noise(D.n, rng)
    prob = _Problem(D, _psi(c, dist), raw_noise(noise), params)
    eta = D.m * eps_avg
    w0, a0 = (np.zeros(D.n), np.full(D.m, 1.0 / D.m)) if init is None else init
    _, _, f_star, _, _ = prob.solve(eta, w0, a0, tol=1e-12, maxiter=200000)
    trace = []
    prob.solve(eta, w0, a0, tol=0.0, maxiter=iters, trace=trace)
    f_star = min(f_star, min(trace))
    gaps = np.array(trace) - f_star
    keep = gaps > 1e-13 * max(1.0, abs(f_star))
    t = np.arange(gaps.size)[keep]
    lg = np.log(gaps[keep])
    if t.size < 2:
        return gaps, 0.0
    slope = np.polyfit(t, lg, 1)[0]
    return gaps, float(math.exp(slope))
