"""Logistic regression with heterogeneous privacy by objective perturbation.

The weighted objective is

    sum_i a_i log(1 + exp(-y_i w.x_i)) + b'.w + (Lambda/2) ||w||^2

with b' = 2 b / eta, ||b|| ~ Gamma(n, 1) and a uniformly random direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core_types import DimensionMismatch, ModelWeights, SolverDiverged


@dataclass(frozen=True)
class NoiseVector:
    b_prime: np.ndarray
    eta_used: float
    raw_norm: float


@dataclass(frozen=True)
class FitReport:
    weights: ModelWeights
    objective_value: float
    gradient_norm: float
    iterations: int
    noise: NoiseVector
    tolerance: float


def sample_noise(n, eta, rng, stream="noise"):
    if n < 1:
        raise ValueError("n must be at least 1")
    if not eta > 0:
        raise ValueError("eta must be positive")
    gen = rng.generator(stream)
    r = gen.gamma(shape=n, scale=1.0)
    d = gen.standard_normal(n)
    d /= np.linalg.norm(d)
    return NoiseVector(2.0 * r / eta * d, float(eta), float(r))


def _check(D, w, a):
    if w.shape != (D.n,):
        raise DimensionMismatch(f"w has shape {w.shape}, expected ({D.n},)")
    if a.shape != (D.m,):
        raise DimensionMismatch(f"a has shape {a.shape}, expected ({D.m},)")


def perturbed_objective(D, w, a, noise, lambda_reg):
    w = np.asarray(w, dtype=float)
    a = np.asarray(a, dtype=float)
    _check(D, w, a)
    b = np.zeros(D.n) if noise is None else noise.b_prime
    margins = D.labels * (D.features @ w)
    return float(a @ np.logaddexp(0.0, -margins) + b @ w + 0.5 * lambda_reg * (w @ w))


def objective_gradient(D, w, a, noise, lambda_reg):
    w = np.asarray(w, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.zeros(D.n) if noise is None else noise.b_prime
    margins = D.labels * (D.features @ w)
    coef = -a * D.labels * expit(-margins)
    return D.features.T @ coef + b + lambda_reg * w


def minimize_smooth(f, grad, x0, tol_rel=1e-8, maxiter=100000):
    """Gradient descent with backtracking (Armijo) and a step that grows after each success.

    Once the Armijo decrease falls below the resolution of f, a step is
    accepted if it lowers ||grad|| and passes a local t <= 1/L test instead.
    Stops once ||grad|| <= tol_rel * max(1, ||grad(x0)||). Returns (x, f(x), ||grad||, iters, converged).
    """
    x = np.asarray(x0, dtype=float).copy()
    fx = f(x)
    g = grad(x)
    gn = float(np.linalg.norm(g))
    tol = tol_rel * max(1.0, gn)
    t = 1.0
    it = 0
    while gn > tol and it < maxiter:
        it += 1
        while True:
            xn = x - t * g
            fn = f(xn)
            dec = 0.5 * t * gn * gn
            if fn <= fx - dec:
                gnext = grad(xn)
                break
            if dec <= 4e-16 * max(1.0, abs(fx)) and fn <= fx + 4e-16 * max(1.0, abs(fx)):
                gnext = grad(xn)
                # ||grad change|| <= ||g|| is a local t <= 1/L test; it rules out
                # steps near 2/L that only oscillate
                if np.linalg.norm(gnext) < gn and np.linalg.norm(gnext - g) <= gn:
                    break
            if t < 1e-300:
                return x, fx, gn, it, False
            t *= 0.5
        x, fx, g = xn, fn, gnext
        gn = float(np.linalg.norm(g))
        t *= 2.0
    return x, fx, gn, it, gn <= tol


def fit(D, alloc, lambda_reg, rng, noise=None, tol_rel=1e-8, maxiter=100000):
    """Minimise the perturbed objective for the allocation's weights a and budget eta.

    The noise is drawn once from the ``noise`` stream of ``rng`` unless given.
    Raises SolverDiverged (carrying the best iterate) if the tolerance is not met.
    """
    if not lambda_reg > 0:
        raise ValueError("lambda_reg must be positive")
    a = np.asarray(alloc.a, dtype=float)
    if noise is None:
        noise = sample_noise(D.n, alloc.eta, rng)

    def f(w):
        return perturbed_objective(D, w, a, noise, lambda_reg)

    def g(w):
        return objective_gradient(D, w, a, noise, lambda_reg)

    w, fw, gn, it, ok = minimize_smooth(f, g, np.zeros(D.n), tol_rel, maxiter)
    g0 = float(np.linalg.norm(g(np.zeros(D.n))))
    report = FitReport(ModelWeights(w), fw, gn, it, noise, tol_rel * max(1.0, g0))
    if not ok:
        raise SolverDiverged(f"gradient norm {gn:.3e} after {it} iterations", best=report)
    return report


def privacy_slack(k, m, lambda_reg):
    return 2.0 * math.log1p(k / (m * lambda_reg))


def recover_noise_from_optimality(D, w_hat, a, lambda_reg):
    """The unique b' for which w_hat is a stationary point of the perturbed objective."""
    w_hat = np.asarray(w_hat, dtype=float)
    a = np.asarray(a, dtype=float)
    _check(D, w_hat, a)
    margins = D.labels * (D.features @ w_hat)
    return D.features.T @ (a * D.labels * expit(-margins)) - lambda_reg * w_hat
