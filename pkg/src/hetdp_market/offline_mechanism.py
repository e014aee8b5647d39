"""Offline mechanism: minimise the proxy loss over allocations, price sellers, fit the private model.

Three solvers minimise mu ||a|| + sigma / eta + eta * sum a_i g_i with
g_i = gamma psi(c_i):

* ``solve_kkt``: closed-form allocation in terms of a multiplier lam; the
  multiplier equation is a cubic on each active-set segment and is solved
  exactly on every segment. Ignores the cap a_i <= k/m.
* ``solve_capped``: exact minimiser with the cap, by following the piecewise
  path a_i = clip(u - v g_i, 0, k/m).
* ``solve_pgd``: projected gradient on a for each eta of a log grid, then a
  bounded 1-D refinement in eta. Used as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels
from .core_types import (
    DegenerateAllocation,
    InfeasibleCap,
    MechanismOutcome,
    ModelWeights,
    NoInteriorSolution,
    PaymentSchedule,
    PrivacyAllocation,
    SensitivityProfile,
    SolverDiverged,
    validate_allocation,
)
from .dp_logreg import fit, privacy_slack
from .gen_bounds import proxy_loss_g


@dataclass(frozen=True)
class SolverGrid:
    eta_min: float
    eta_max: float
    points: int = 200

    def __post_init__(self):
        if not 0 < self.eta_min < self.eta_max:
            raise ValueError("need 0 < eta_min < eta_max")
        if self.points < 2:
            raise ValueError("need at least 2 grid points")

    @classmethod
    def default(cls, m, L, points=200):
        return cls(1e-4 * m * L, m * L, points)

    def values(self):
        return np.geomspace(self.eta_min, self.eta_max, self.points)


@dataclass(frozen=True)
class KKTSolution:
    lambda_: float
    epsilon: np.ndarray
    active_set: np.ndarray
    loss: float
    n_roots: int
    lambda_smallest: float
    cap_binding: bool
    max_a: float


@dataclass
class AllocationResult:
    allocation: PrivacyAllocation
    loss: float
    lambda_: float
    method: str
    cap_binding: bool = False
    n_roots: int = 0
    iterations: int = 0
    extra: dict = field(default_factory=dict)


def _c(c):
    return np.asarray(getattr(c, "c", c), dtype=float)


def scaled_costs(c, params, dist):
    """g_i = gamma * psi(c_i) (inf for reports above a bounded support)."""
    return params.gamma * np.atleast_1d(dist.psi(_c(c)))


def project_capped_simplex(a, cap):
    a = np.asarray(a, dtype=float)
    if cap * a.size < 1.0 - 1e-12:
        raise InfeasibleCap(f"cap {cap} too small for {a.size} coordinates")
    return _kernels.project_capped_simplex(a, cap)


def _eps_from_lambda(g, lam, mu):
    w = np.maximum(lam - g, 0.0)
    w[~np.isfinite(g)] = 0.0
    S1 = w.sum()
    S2 = w @ w
    return mu * w / (math.sqrt(S2) * S1), S1


def kkt_from_g(g, mu, sigma, cap):
    g = np.asarray(g, dtype=float)
    order = np.argsort(g, kind="stable")
    r = _kernels.kkt_batch(g[order][None, :], mu, sigma)
    lam = float(r["lam"][0])
    if not math.isfinite(lam):
        raise NoInteriorSolution("multiplier equation has no root")
    eps, S1 = _eps_from_lambda(g, lam, mu)
    max_a = (lam - g[order[0]]) / S1
    return KKTSolution(
        lambda_=lam,
        epsilon=eps,
        active_set=np.nonzero(eps > 0)[0],
        loss=float(r["loss"][0]),
        n_roots=int(r["n_roots"][0]),
        lambda_smallest=float(r["lam_smallest"][0]),
        cap_binding=bool(max_a > cap + 1e-12),
        max_a=float(max_a),
    )


def solve_kkt(c, params, dist):
    """Uncapped closed-form allocation; ``cap_binding`` reports whether a_i <= k/m fails."""
    g = scaled_costs(c, params, dist)
    if not np.isfinite(g).any():
        raise NoInteriorSolution("no seller has a finite virtual cost")
    return kkt_from_g(g, params.mu, params.sigma, params.cap(g.size))


def capped_from_g(g, mu, sigma, cap):
    """Exact capped minimiser. Returns (eps, loss, cutoff) with cutoff the largest g still bought."""
    g = np.asarray(g, dtype=float)
    fin = np.nonzero(np.isfinite(g))[0]
    if fin.size == 0 or cap * fin.size < 1.0 - 1e-12:
        raise InfeasibleCap("not enough finite-cost sellers to satisfy the cap")
    order = fin[np.argsort(g[fin], kind="stable")]
    gs = g[order]
    loss, v, u, c0, j2, _ = _kernels.capped_path(gs, mu, sigma, min(cap, 1.0))
    if not math.isfinite(loss):
        raise NoInteriorSolution("no stationary point on the capped path")
    a_sorted = np.zeros(gs.size)
    a_sorted[:c0] = min(cap, 1.0)
    a_sorted[c0:j2] = np.clip(u - v * gs[c0:j2], 0.0, cap)
    a = np.zeros(g.size)
    a[order] = a_sorted
    a /= a.sum()
    p = float(a @ np.where(np.isfinite(g), g, 0.0))
    eta = math.sqrt(sigma / p)
    cutoff = u / v if v > 0 else math.inf
    return a * eta, float(loss), cutoff


def solve_capped(c, params, dist):
    g = scaled_costs(c, params, dist)
    eps, loss, cutoff = capped_from_g(g, params.mu, params.sigma, params.cap(g.size))
    return AllocationResult(PrivacyAllocation.from_epsilon(eps), loss, cutoff, "capped-path", True)


def pgd_from_g(g, mu, sigma, cap, grid, refine=True, tol=1e-9, maxiter=100000):
    """Grid line search over eta with projected gradient for a; returns (a, eta, loss, iters)."""
    g = np.asarray(g, dtype=float)
    m = g.size
    fin = np.isfinite(g)
    if cap * fin.sum() < 1.0 - 1e-12:
        raise InfeasibleCap("not enough finite-cost sellers to satisfy the cap")
    gf = g[fin]
    cap = min(cap, 1.0)

    def inner(eta, a0):
        a, it, _ = _kernels.pgd_fixed_eta(gf, mu, eta, cap, a0, tol, maxiter)
        return a, mu * math.sqrt(a @ a) + sigma / eta + eta * (a @ gf), it

    a = np.full(gf.size, 1.0 / gf.size)
    best = (math.inf, None, None)
    total_it = 0
    etas = grid.values()
    for eta in etas:
        a, val, it = inner(eta, a)
        total_it += it
        if val < best[0]:
            best = (val, eta, a)
    if best[1] is None:
        raise DegenerateAllocation("every grid point is degenerate")
    val, eta, a = best
    if refine:
        step = math.log(etas[1] / etas[0])
        lo = max(math.log(eta) - step, math.log(grid.eta_min))
        hi = min(math.log(eta) + step, math.log(grid.eta_max))
        a_ref = a
        res = minimize_scalar(lambda le: inner(math.exp(le), a_ref)[1], bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-9})
        if res.fun < val:
            eta = math.exp(res.x)
            a, val, it = inner(eta, a_ref)
            total_it += it
    out = np.zeros(m)
    out[fin] = a
    return out, float(eta), float(val), total_it


def solve_pgd(c, params, dist, grid=None, refine=True, info=None):
    """Projected-gradient solution as a PrivacyAllocation (details in ``info`` if a dict is passed)."""
    g = scaled_costs(c, params, dist)
    m = g.size
    grid = grid or SolverGrid.default(m, params.L)
    a, eta, loss, iters = pgd_from_g(g, params.mu, params.sigma, params.cap(m), grid, refine)
    if info is not None:
        info.update(loss=loss, iterations=iters, eta=eta)
    return PrivacyAllocation(a, eta, a * eta)


def solve_allocation(c, params, dist, cap_solver="exact", grid=None):
    """Mechanism allocation: KKT when the cap is slack, otherwise the capped solver.

    ``cap_solver`` is ``"exact"`` (capped path) or ``"pgd"``.
    """
    g = scaled_costs(c, params, dist)
    m = g.size
    cap = params.cap(m)
    try:
        kkt = kkt_from_g(g, params.mu, params.sigma, cap)
    except NoInteriorSolution:
        kkt = None
    if kkt is not None and not kkt.cap_binding:
        return AllocationResult(PrivacyAllocation.from_epsilon(kkt.epsilon), kkt.loss, kkt.lambda_,
                                "kkt", False, kkt.n_roots,
                                extra={"lambda_smallest": kkt.lambda_smallest})
    if cap_solver == "pgd":
        grid = grid or SolverGrid.default(m, params.L)
        a, eta, loss, iters = pgd_from_g(g, params.mu, params.sigma, cap, grid)
        return AllocationResult(PrivacyAllocation(a, eta, a * eta), loss, math.nan, "pgd",
                                True, 0, iters)
    eps, loss, cutoff = capped_from_g(g, params.mu, params.sigma, cap)
    return AllocationResult(PrivacyAllocation.from_epsilon(eps), loss, cutoff, "capped-path",
                            kkt is not None)


def epsilon_of_report(c, i, z, params, dist, cap_solver="exact"):
    """epsilon_i after re-solving with seller i's report replaced by z."""
    if z < 0:
        raise ValueError("reports must be non-negative")
    cc = _c(c).copy()
    cc[i] = z
    try:
        res = solve_allocation(cc, params, dist, cap_solver)
    except (NoInteriorSolution, InfeasibleCap, DegenerateAllocation):
        return 0.0
    return float(res.allocation.epsilon[i])


def epsilon_curve(c, i, zs, params, dist):
    """epsilon_i(z) on a grid of reports, batched through the compiled kernel.

    Also returns the cutoff report above which seller i receives nothing.
    """
    g = scaled_costs(c, params, dist)
    m = g.size
    others = np.delete(g, i)
    others = np.sort(others[np.isfinite(others)])
    cap = min(params.cap(m), 1.0)
    gz = params.gamma * np.atleast_1d(dist.psi(np.asarray(zs, dtype=float)))
    eps = np.zeros(gz.size)
    fin = np.isfinite(gz)
    if fin.any() and cap * (others.size + 1) >= 1.0 - 1e-12:
        e, _, _ = _kernels.capped_curve(others, gz[fin], params.mu, params.sigma, cap)
        eps[fin] = e
    return eps


def cutoff_report(c, i, params, dist):
    """Largest report at which seller i is still bought: psi^{-1}(lam_{-i} / gamma).

    lam_{-i} is the cutoff of the problem without seller i (at the cutoff
    seller i carries zero weight, so the others' solution is unchanged).
    """
    g = scaled_costs(c, params, dist)
    m = g.size
    others = np.delete(g, i)
    others = np.sort(others[np.isfinite(others)])
    cap = min(params.cap(m), 1.0)
    if others.size == 0:
        return dist.upper
    if cap * others.size < 1.0 - 1e-12:
        # the others alone cannot fill the capped simplex: i is always bought
        return dist.upper
    loss, v, u, _, _, _ = _kernels.capped_path(others, params.mu, params.sigma, cap)
    if not math.isfinite(loss) or not v > 0:
        return dist.upper
    return float(dist.psi_inv((u / v) / params.gamma))


def degenerate_outcome(m, n, params, seed, reason):
    return MechanismOutcome(
        allocation=None,
        payments=PaymentSchedule(np.zeros(m)),
        weights=ModelWeights(np.zeros(n)),
        diagnostics={
            "delta": privacy_slack(params.k, m, params.lambda_reg),
            "lambda": None,
            "proxy_loss": math.inf,
            "seed": seed,
            "degenerate": True,
            "reason": reason,
        },
    )


def run_offline_mechanism(D, c, params, dist, rng, quad=None, cap_solver="exact", payments=True):
    """Allocate, pay every seller by the payment identity, then fit the private model."""
    from .payments import QuadratureConfig, seller_payment

    c = c if isinstance(c, SensitivityProfile) else SensitivityProfile(c)
    m = len(c)
    if m != D.m:
        raise ValueError(f"{m} sensitivities for {D.m} data rows")
    try:
        res = solve_allocation(c, params, dist, cap_solver)
    except (NoInteriorSolution, InfeasibleCap, DegenerateAllocation) as exc:
        return degenerate_outcome(m, D.n, params, rng.seed, str(exc))
    alloc = res.allocation
    check = validate_allocation(alloc, params, m)
    quad = quad or QuadratureConfig()
    t = np.zeros(m)
    if payments:
        for i in range(m):
            t[i] = seller_payment(c, i, params, dist, quad)
    diag = {
        "delta": privacy_slack(params.k, m, params.lambda_reg),
        "lambda": res.lambda_,
        "proxy_loss": res.loss,
        "seed": rng.seed,
        "method": res.method,
        "cap_binding": res.cap_binding,
        "n_roots": res.n_roots,
        "feasible": check["feasible"],
    }
    try:
        rep = fit(D, alloc, params.lambda_reg, rng)
        diag["fit_converged"] = True
    except SolverDiverged as exc:
        rep = exc.best
        diag["fit_converged"] = False
    diag.update(fit_iterations=rep.iterations, gradient_norm=rep.gradient_norm,
                noise_norm=float(np.linalg.norm(rep.noise.b_prime)))
    return MechanismOutcome(alloc, PaymentSchedule(t), rep.weights, diag)
