"""Pure numpy implementations of the numerical kernels.

These mirror ``_ckernels.pyx`` signature for signature and are used when the
compiled extension is unavailable (or when ``HETDP_PURE_PYTHON=1``).
"""

import math

import numpy as np

BISECT_ITERS = 200


def _cubic_R(d, k, gbar, M2, s):
    # S1 * residual of the multiplier equation, written in d = lam - mean(active g)
    return -s * k * k * d ** 3 + k * (gbar - s * M2) * d - M2


def kkt_batch(G, mu, sigma):
    """Solve the multiplier equation for every row of ``G``.

    ``G`` holds scaled virtual costs ``gamma * psi(c)`` sorted ascending per
    row; ``+inf`` entries (sellers that can never be active) must sit at the
    tail. Returns a dict of per-row arrays; rows with no root get NaN.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    B, m = G.shape
    s = sigma / (mu * mu)
    finite = np.isfinite(G)
    base = np.where(finite[:, :1], G[:, :1], 0.0)
    H = np.where(finite, G - base, 0.0)
    k = np.arange(1, m + 1, dtype=float)[None, :]
    cs1 = np.cumsum(H, axis=1)
    cs2 = np.cumsum(H * H, axis=1)
    hbar = cs1 / k
    M2 = np.maximum(cs2 - cs1 * hbar, 0.0)
    gbar = hbar + base

    lo = np.where(finite, G, np.inf)
    hi = np.concatenate([lo[:, 1:], np.full((B, 1), np.inf)], axis=1)
    valid = finite & (hi > lo)
    with np.errstate(invalid="ignore", divide="ignore"):
        d_lo = np.where(valid, np.maximum(lo - gbar, 0.0), 0.0)
        far = 2.0 * np.sqrt(np.maximum(gbar, 0.0) / (s * k)) + 2.0 * d_lo + 1e-300
        d_hi = np.where(valid, np.where(np.isfinite(hi), hi - gbar, far), 0.0)
        crit_sq = (gbar - s * M2) / (3.0 * s * k)
        d_c = np.where(crit_sq > 0, np.sqrt(np.maximum(crit_sq, 0.0)), 0.0)
    d_mid = np.clip(d_c, d_lo, d_hi)

    R_lo = _cubic_R(d_lo, k, gbar, M2, s)
    # zero-width start of an all-equal active block: use the right limit
    pos_lo = np.where((d_lo == 0.0) & (M2 == 0.0), gbar > 0.0, R_lo > 0.0)
    pos_mid = _cubic_R(d_mid, k, gbar, M2, s) > 0.0
    pos_hi = _cubic_R(d_hi, k, gbar, M2, s) > 0.0

    brackets = []
    for a, b, pa, pb in ((d_lo, d_mid, pos_lo, pos_mid), (d_mid, d_hi, pos_mid, pos_hi)):
        mask = valid & (pa != pb) & (b > a)
        r, c = np.nonzero(mask)
        brackets.append((r, c, a[mask], b[mask], pa[mask]))
    rows = np.concatenate([x[0] for x in brackets])
    cols = np.concatenate([x[1] for x in brackets])
    a = np.concatenate([x[2] for x in brackets])
    b = np.concatenate([x[3] for x in brackets])
    pa = np.concatenate([x[4] for x in brackets])

    kk = cols + 1.0
    gb = gbar[rows, cols]
    m2 = M2[rows, cols]
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (a + b)
        pm = _cubic_R(mid, kk, gb, m2, s) > 0.0
        same = pm == pa
        a = np.where(same, mid, a)
        b = np.where(same, b, mid)
        if np.all((b - a) <= 4e-16 * np.maximum(np.abs(b), 1e-300)):
            break
    d = 0.5 * (a + b)
    lam = gb + d
    S1 = kk * d
    S2 = kk * d * d + m2
    with np.errstate(invalid="ignore", divide="ignore"):
        rS2 = np.sqrt(S2)
        loss = mu * rS2 / S1 + sigma * rS2 / mu + mu * (lam * S1 - S2) / (rS2 * S1)

    out = {
        "lam": np.full(B, np.nan),
        "lam_smallest": np.full(B, np.nan),
        "loss": np.full(B, np.inf),
        "k_active": np.zeros(B, dtype=np.int64),
        "S1": np.full(B, np.nan),
        "S2": np.full(B, np.nan),
        "n_roots": np.zeros(B, dtype=np.int64),
    }
    if rows.size:
        np.add.at(out["n_roots"], rows, 1)
        # best root per row: lowest loss, ties to the smaller multiplier
        order = np.lexsort((lam, loss, rows))
        first = np.ones(order.size, dtype=bool)
        first[1:] = rows[order][1:] != rows[order][:-1]
        sel = order[first]
        r = rows[sel]
        out["lam"][r] = lam[sel]
        out["loss"][r] = loss[sel]
        out["k_active"][r] = cols[sel] + 1
        out["S1"][r] = S1[sel]
        out["S2"][r] = S2[sel]
        order = np.lexsort((lam, rows))
        first = np.ones(order.size, dtype=bool)
        first[1:] = rows[order][1:] != rows[order][:-1]
        sel = order[first]
        out["lam_smallest"][rows[sel]] = lam[sel]
    return out


def _piece_roots(A, Bq, C, v0, v1):
    """Positive roots of A v^3 + Bq v^2 + C on [v0, v1] (A <= 0, C < 0)."""
    if A == 0.0:
        if Bq <= 0.0:
            return []
        v = math.sqrt(-C / Bq)
        return [v] if v0 <= v <= v1 else []
    vc = -2.0 * Bq / (3.0 * A) if Bq > 0.0 else 0.0
    if not math.isfinite(v1):
        v1 = max(v0, 1.5 * vc) * 2.0 + 1.0

    def Q(v):
        return (A * v + Bq) * v * v + C

    pts = [v0]
    if v0 < vc < v1:
        pts.append(vc)
    pts.append(v1)
    roots = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        qlo, qhi = Q(lo), Q(hi)
        if (qlo > 0.0) == (qhi > 0.0) or hi <= lo:
            continue
        plo = qlo > 0.0
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            if (Q(mid) > 0.0) == plo:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 4e-16 * abs(hi):
                break
        roots.append(0.5 * (lo + hi))
    return roots


def capped_path(g, mu, sigma, kappa):
    """Exact minimiser of mu*||a|| + 2*sqrt(sigma * a.g) over the capped simplex.

    ``g`` must be finite and sorted ascending; ``kappa`` is the per-seller cap
    on ``a``. Walks the regularisation path a_i = clip(u - v g_i, 0, kappa)
    piece by piece; on each piece the stationarity condition is a cubic in v.

    Returns ``(loss, v, u, c, j2, n_roots)``; weights are kappa for indices
    below ``c``, ``u - v g_i`` for ``c <= i < j2`` and zero beyond. ``loss`` is
    inf when no stationary point exists.
    """
    g = np.asarray(g, dtype=float)
    m = g.size
    if m == 0 or kappa * m < 1.0 - 1e-12:
        return math.inf, math.nan, math.nan, 0, 0, 0
    g0 = g[0]
    h = g - g0
    P1 = np.concatenate([[0.0], np.cumsum(h)])
    P2 = np.concatenate([[0.0], np.cumsum(h * h)])
    mu2 = mu * mu
    c, j2, v = 0, m, 0.0
    best = (math.inf, math.nan, math.nan, 0, 0)
    n_roots = 0
    while True:
        n = j2 - c
        rem = 1.0 - c * kappa
        if rem <= 1e-15:
            # every unit of weight sits on capped sellers: a vertex of the feasible set
            GC = P1[c] + c * g0
            if GC > 0.0:
                loss = mu * math.sqrt(c * kappa * kappa) + 2.0 * math.sqrt(sigma * kappa * GC)
                if loss < best[0]:
                    ub = v * g[c] if c < m else math.inf
                    best = (loss, v, ub, c, c)
            break
        if n <= 0:
            break
        S = P1[j2] - P1[c]
        hb = S / n
        M2 = max(P2[j2] - P2[c] - S * hb, 0.0)
        gbar = hb + g0
        GC = P1[c] + c * g0
        B0 = c * kappa * kappa + rem * rem / n
        P0 = kappa * GC + rem * gbar
        v_drop = rem / (n * (g[j2 - 1] - gbar)) if g[j2 - 1] > gbar else math.inf
        v_cap = (kappa - rem / n) / (gbar - g[c]) if gbar > g[c] else math.inf
        v_end = min(v_drop, v_cap)
        if v_end >= v:
            for r in _piece_roots(-mu2 * M2, mu2 * P0 - sigma * M2, -sigma * B0, v, v_end):
                n_roots += 1
                p = P0 - r * M2
                if p <= 0.0:
                    continue
                loss = mu * math.sqrt(B0 + r * r * M2) + 2.0 * math.sqrt(sigma * p)
                if loss < best[0]:
                    best = (loss, r, rem / n + r * gbar, c, j2)
        if not math.isfinite(v_end):
            # last piece: all remaining g are tied, so a does not move with v
            if P0 > 0.0:
                loss = mu * math.sqrt(B0) + 2.0 * math.sqrt(sigma * P0)
                if loss < best[0]:
                    best = (loss, v, rem / n + v * gbar, c, j2)
            break
        v = max(v, v_end)
        if v_cap < v_drop:
            c += 1
        else:
            j2 -= 1
    loss, vb, ub, cb, jb = best
    return loss, vb, ub, cb, jb, n_roots


def capped_curve(others, gz, mu, sigma, kappa):
    """Allocation of one extra seller placed at each value of ``gz``.

    ``others`` are the remaining sellers' scaled virtual costs (finite,
    sorted). Returns ``(eps, eta, cutoff)`` arrays where ``cutoff`` is the
    largest scaled virtual cost that still receives weight.
    """
    others = np.asarray(others, dtype=float)
    gz = np.asarray(gz, dtype=float)
    eps = np.zeros(gz.size)
    eta = np.full(gz.size, np.nan)
    cut = np.full(gz.size, np.nan)
    for i, z in enumerate(gz):
        pos = np.searchsorted(others, z, side="right")
        g = np.insert(others, pos, z)
        loss, v, u, c, j2, _ = capped_path(g, mu, sigma, kappa)
        if not math.isfinite(loss):
            continue
        p = kappa * g[:c].sum() + ((u - v * g[c:j2]) * g[c:j2]).sum()
        eta[i] = math.sqrt(sigma / p)
        if pos < c:
            ai = kappa
        elif pos < j2:
            ai = min(max(u - v * z, 0.0), kappa)
        else:
            ai = 0.0
        eps[i] = ai * eta[i]
        cut[i] = u / v if v > 0.0 else math.inf
    return eps, eta, cut


def project_capped_simplex(x, cap):
    """Euclidean projection onto {a : 0 <= a_i <= cap, sum a = 1}.

    The coordinate sum of clip(x - tau, 0, cap) is piecewise linear and
    non-increasing in tau, so the shift is found exactly from the sorted
    breakpoints x_i - cap and x_i.
    """
    x = np.asarray(x, dtype=float)
    m = x.size
    cap = min(cap, 1.0)
    bp = np.concatenate([x - cap, x])
    step = np.concatenate([np.ones(m), -np.ones(m)])
    order = np.argsort(bp, kind="stable")
    bp = bp[order]
    slope = np.cumsum(step[order])
    # f at each breakpoint; f(-inf) = m * cap
    f = m * cap - np.concatenate([[0.0], np.cumsum(slope[:-1] * np.diff(bp))])
    j = np.searchsorted(-f, -1.0, side="left")
    if j == 0:
        tau = bp[0]
    else:
        j -= 1
        tau = bp[j] + (f[j] - 1.0) / slope[j] if slope[j] > 0 else bp[j]
    # exact shift on the identified free set
    free = (x - tau > 0.0) & (x - tau < cap)
    if free.any():
        tau = (x[free].sum() + (x - tau >= cap).sum() * cap - 1.0) / free.sum()
    return np.clip(x - tau, 0.0, cap)


def pgd_fixed_eta(g, mu, eta, cap, a0, tol=1e-9, maxiter=100000):
    """Accelerated projected gradient on mu*||a|| + eta * a.g over the capped simplex.

    Nesterov momentum with backtracking and gradient-based restarts. Stops
    when the gradient-mapping norm at the current step falls below ``tol``.
    Returns ``(a, iters, pg_norm)``.
    """
    g = np.asarray(g, dtype=float)
    a = project_capped_simplex(np.asarray(a0, dtype=float), cap)
    y = a.copy()
    theta = 1.0
    t = math.sqrt(a @ a) / mu
    pg = math.inf
    it = 0
    for it in range(1, maxiter + 1):
        ny = math.sqrt(y @ y)
        fy = mu * ny + eta * (y @ g)
        grad = mu * y / ny + eta * g
        while True:
            a_new = project_capped_simplex(y - t * grad, cap)
            diff = a_new - y
            f_new = mu * math.sqrt(a_new @ a_new) + eta * (a_new @ g)
            if f_new <= fy + grad @ diff + (diff @ diff) / (2.0 * t) + 1e-15 * abs(fy):
                break
            t *= 0.5
        pg = math.sqrt(diff @ diff) / t
        if (y - a_new) @ (a_new - a) > 0.0:
            # momentum points uphill: restart from the new iterate
            theta = 1.0
            y = a_new.copy()
        else:
            theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
            y = a_new + ((theta - 1.0) / theta_new) * (a_new - a)
            theta = theta_new
        a = a_new
        if pg < tol:
            break
        t *= 1.5
    return a, it, pg
