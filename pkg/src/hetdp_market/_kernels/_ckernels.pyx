# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY, NAN, isfinite

cnp.import_array()

cdef enum:
    BISECT_ITERS = 200


cdef inline double _cubic_R(double d, double k, double gbar, double M2, double s) nogil:
    return -s * k * k * d * d * d + k * (gbar - s * M2) * d - M2


cdef double _bisect_R(double a, double b, bint pa, double k, double gbar,
                      double M2, double s) nogil:
    cdef double mid
    cdef int it
    for it in range(BISECT_ITERS):
        mid = 0.5 * (a + b)
        if (_cubic_R(mid, k, gbar, M2, s) > 0.0) == pa:
            a = mid
        else:
            b = mid
        if b - a <= 4e-16 * fabs(b):
            break
    return 0.5 * (a + b)


def kkt_batch(G, double mu, double sigma):
    """Solve the multiplier equation for every row of ``G`` (see ``_pykernels.kkt_batch``)."""
    cdef cnp.ndarray[double, ndim=2] Ga = np.ascontiguousarray(np.atleast_2d(np.asarray(G, dtype=float)))
    cdef double[:, ::1] Gv = Ga
    cdef Py_ssize_t B = Ga.shape[0], m = Ga.shape[1], r, j
    cdef double s = sigma / (mu * mu)
    lam_o = np.full(B, np.nan)
    lams_o = np.full(B, np.nan)
    loss_o = np.full(B, np.inf)
    k_o = np.zeros(B, dtype=np.int64)
    S1_o = np.full(B, np.nan)
    S2_o = np.full(B, np.nan)
    nr_o = np.zeros(B, dtype=np.int64)
    cdef double[::1] lam_v = lam_o, lams_v = lams_o, loss_v = loss_o, S1_v = S1_o, S2_v = S2_o
    cdef long long[::1] k_v = k_o, nr_v = nr_o
    cdef double base, h, cs1, cs2, k, hbar, M2, gbar, lo, hi, d_lo, d_hi, crit_sq, d_c, d_mid
    cdef double pts[3]
    cdef bint pos[3]
    cdef int q
    cdef double d, lam, S1, S2, rS2, loss
    with nogil:
        for r in range(B):
            if not isfinite(Gv[r, 0]):
                continue
            base = Gv[r, 0]
            cs1 = 0.0
            cs2 = 0.0
            for j in range(m):
                if not isfinite(Gv[r, j]):
                    break
                h = Gv[r, j] - base
                cs1 += h
                cs2 += h * h
                lo = Gv[r, j]
                hi = Gv[r, j + 1] if j + 1 < m else INFINITY
                if not (hi > lo):
                    continue
                k = j + 1.0
                hbar = cs1 / k
                M2 = cs2 - cs1 * hbar
                if M2 < 0.0:
                    M2 = 0.0
                gbar = hbar + base
                d_lo = lo - gbar
                if d_lo < 0.0:
                    d_lo = 0.0
                if isfinite(hi):
                    d_hi = hi - gbar
                else:
                    d_hi = 2.0 * sqrt((gbar if gbar > 0.0 else 0.0) / (s * k)) + 2.0 * d_lo + 1e-300
                crit_sq = (gbar - s * M2) / (3.0 * s * k)
                d_c = sqrt(crit_sq) if crit_sq > 0.0 else 0.0
                d_mid = d_c
                if d_mid < d_lo:
                    d_mid = d_lo
                if d_mid > d_hi:
                    d_mid = d_hi
                pts[0] = d_lo
                pts[1] = d_mid
                pts[2] = d_hi
                if d_lo == 0.0 and M2 == 0.0:
                    pos[0] = gbar > 0.0
                else:
                    pos[0] = _cubic_R(d_lo, k, gbar, M2, s) > 0.0
                pos[1] = _cubic_R(d_mid, k, gbar, M2, s) > 0.0
                pos[2] = _cubic_R(d_hi, k, gbar, M2, s) > 0.0
                for q in range(2):
                    if pos[q] == pos[q + 1] or not (pts[q + 1] > pts[q]):
                        continue
                    d = _bisect_R(pts[q], pts[q + 1], pos[q], k, gbar, M2, s)
                    lam = gbar + d
                    S1 = k * d
                    S2 = k * d * d + M2
                    rS2 = sqrt(S2)
                    loss = mu * rS2 / S1 + sigma * rS2 / mu + mu * (lam * S1 - S2) / (rS2 * S1)
                    nr_v[r] += 1
                    if nr_v[r] == 1 or lam < lams_v[r]:
                        lams_v[r] = lam
                    if loss < loss_v[r] or (loss == loss_v[r] and lam < lam_v[r]):
                        loss_v[r] = loss
                        lam_v[r] = lam
                        k_v[r] = j + 1
                        S1_v[r] = S1
                        S2_v[r] = S2
    return {"lam": lam_o, "lam_smallest": lams_o, "loss": loss_o, "k_active": k_o,
            "S1": S1_o, "S2": S2_o, "n_roots": nr_o}


cdef inline double _Q(double v, double A, double Bq, double C) nogil:
    return (A * v + Bq) * v * v + C


cdef int _piece_roots(double A, double Bq, double C, double v0, double v1,
                      double* out) nogil:
    cdef double vc, lo, hi, qlo, qhi, mid, v
    cdef double pts[3]
    cdef int npts = 0, q, it, n = 0
    cdef bint plo
    if A == 0.0:
        if Bq <= 0.0:
            return 0
        v = sqrt(-C / Bq)
        if v0 <= v <= v1:
            out[0] = v
            return 1
        return 0
    vc = -2.0 * Bq / (3.0 * A) if Bq > 0.0 else 0.0
    if not isfinite(v1):
        v1 = (v0 if v0 > 1.5 * vc else 1.5 * vc) * 2.0 + 1.0
    pts[npts] = v0
    npts += 1
    if v0 < vc < v1:
        pts[npts] = vc
        npts += 1
    pts[npts] = v1
    npts += 1
    for q in range(npts - 1):
        lo = pts[q]
        hi = pts[q + 1]
        qlo = _Q(lo, A, Bq, C)
        qhi = _Q(hi, A, Bq, C)
        if (qlo > 0.0) == (qhi > 0.0) or hi <= lo:
            continue
        plo = qlo > 0.0
        for it in range(BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            if (_Q(mid, A, Bq, C) > 0.0) == plo:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 4e-16 * fabs(hi):
                break
        out[n] = 0.5 * (lo + hi)
        n += 1
    return n


cdef int _capped_path(const double* g, Py_ssize_t m, double mu, double sigma,
                      double kappa, double* P1, double* P2, double* res) nogil:
    # res <- loss, v, u, c, j2 ; returns number of roots found
    cdef double g0, h, mu2 = mu * mu, v = 0.0, rem, S, hb, M2, gbar, GC, B0, P0
    cdef double v_drop, v_cap, v_end, p, loss
    cdef double roots[2]
    cdef Py_ssize_t i, c = 0, j2 = m, n
    cdef int nr, q, n_roots = 0
    res[0] = INFINITY
    res[1] = NAN
    res[2] = NAN
    res[3] = 0
    res[4] = 0
    if m == 0 or kappa * m < 1.0 - 1e-12:
        return 0
    g0 = g[0]
    P1[0] = 0.0
    P2[0] = 0.0
    for i in range(m):
        h = g[i] - g0
        P1[i + 1] = P1[i] + h
        P2[i + 1] = P2[i] + h * h
    while True:
        n = j2 - c
        rem = 1.0 - c * kappa
        if rem <= 1e-15:
            # every unit of weight sits on capped sellers: a vertex of the feasible set
            GC = P1[c] + c * g0
            if GC > 0.0:
                loss = mu * sqrt(c * kappa * kappa) + 2.0 * sqrt(sigma * kappa * GC)
                if loss < res[0]:
                    res[0] = loss
                    res[1] = v
                    res[2] = v * g[c] if c < m else INFINITY
                    res[3] = c
                    res[4] = c
            break
        if n <= 0:
            break
        S = P1[j2] - P1[c]
        hb = S / n
        M2 = P2[j2] - P2[c] - S * hb
        if M2 < 0.0:
            M2 = 0.0
        gbar = hb + g0
        GC = P1[c] + c * g0
        B0 = c * kappa * kappa + rem * rem / n
        P0 = kappa * GC + rem * gbar
        v_drop = rem / (n * (g[j2 - 1] - gbar)) if g[j2 - 1] > gbar else INFINITY
        v_cap = (kappa - rem / n) / (gbar - g[c]) if gbar > g[c] else INFINITY
        v_end = v_drop if v_drop < v_cap else v_cap
        if v_end >= v:
            nr = _piece_roots(-mu2 * M2, mu2 * P0 - sigma * M2, -sigma * B0, v, v_end, roots)
            for q in range(nr):
                n_roots += 1
                p = P0 - roots[q] * M2
                if p <= 0.0:
                    continue
                loss = mu * sqrt(B0 + roots[q] * roots[q] * M2) + 2.0 * sqrt(sigma * p)
                if loss < res[0]:
                    res[0] = loss
                    res[1] = roots[q]
                    res[2] = rem / n + roots[q] * gbar
                    res[3] = c
                    res[4] = j2
        if not isfinite(v_end):
            # last piece: all remaining g are tied, so a does not move with v
            if P0 > 0.0:
                loss = mu * sqrt(B0) + 2.0 * sqrt(sigma * P0)
                if loss < res[0]:
                    res[0] = loss
                    res[1] = v
                    res[2] = rem / n + v * gbar
                    res[3] = c
                    res[4] = j2
            break
        if v_end > v:
            v = v_end
        if v_cap < v_drop:
            c += 1
        else:
            j2 -= 1
    return n_roots


def capped_path(g, double mu, double sigma, double kappa):
    """Exact capped-simplex minimiser (see ``_pykernels.capped_path``)."""
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=float)
    cdef Py_ssize_t m = gv.shape[0]
    cdef double[::1] P1 = np.empty(m + 1), P2 = np.empty(m + 1)
    cdef double res[5]
    cdef int nr
    with nogil:
        nr = _capped_path(&gv[0] if m else NULL, m, mu, sigma, kappa, &P1[0], &P2[0], res)
    return res[0], res[1], res[2], int(res[3]), int(res[4]), nr


def capped_curve(others, gz, double mu, double sigma, double kappa):
    """Allocation of one extra seller placed at each value of ``gz``.

    ``others`` are the remaining sellers' scaled virtual costs (finite,
    sorted). Returns ``(eps, eta, cutoff)`` arrays where ``cutoff`` is the
    largest scaled virtual cost that still receives weight.
    """
    cdef double[::1] ov = np.ascontiguousarray(others, dtype=float)
    cdef double[::1] zv = np.ascontiguousarray(gz, dtype=float)
    cdef Py_ssize_t mo = ov.shape[0], nz = zv.shape[0], m = mo + 1, i, j, pos
    cdef double[::1] g = np.empty(m), P1 = np.empty(m + 1), P2 = np.empty(m + 1)
    eps_o = np.zeros(nz)
    eta_o = np.full(nz, np.nan)
    cut_o = np.full(nz, np.nan)
    cdef double[::1] eps_v = eps_o, eta_v = eta_o, cut_v = cut_o
    cdef double res[5]
    cdef double z, u, v, p, ai, eta
    with nogil:
        for i in range(nz):
            z = zv[i]
            pos = 0
            while pos < mo and ov[pos] <= z:
                pos += 1
            for j in range(pos):
                g[j] = ov[j]
            g[pos] = z
            for j in range(pos, mo):
                g[j + 1] = ov[j]
            _capped_path(&g[0], m, mu, sigma, kappa, &P1[0], &P2[0], res)
            if not isfinite(res[0]):
                continue
            v = res[1]
            u = res[2]
            p = 0.0
            for j in range(<Py_ssize_t>res[3]):
                p += kappa * g[j]
            for j in range(<Py_ssize_t>res[3], <Py_ssize_t>res[4]):
                p += (u - v * g[j]) * g[j]
            eta = sqrt(sigma / p)
            if pos < <Py_ssize_t>res[3]:
                ai = kappa
            elif pos < <Py_ssize_t>res[4]:
                ai = u - v * z
                if ai < 0.0:
                    ai = 0.0
                if ai > kappa:
                    ai = kappa
            else:
                ai = 0.0
            eps_v[i] = ai * eta
            eta_v[i] = eta
            cut_v[i] = u / v if v > 0.0 else INFINITY
    return eps_o, eta_o, cut_o


cdef double _project(const double* x, Py_ssize_t m, double cap, double* out) nogil:
    # bisection on the shift, then an exact solve on the identified free set
    cdef double lo, hi, tau, s, xi, free_sum, nf, ncap
    cdef Py_ssize_t i
    cdef int it
    if cap > 1.0:
        cap = 1.0
    lo = x[0]
    hi = x[0]
    for i in range(m):
        if x[i] < lo:
            lo = x[i]
        if x[i] > hi:
            hi = x[i]
    lo = lo - cap - 1.0
    for it in range(100):
        tau = 0.5 * (lo + hi)
        s = 0.0
        for i in range(m):
            xi = x[i] - tau
            if xi > cap:
                s += cap
            elif xi > 0.0:
                s += xi
        if s > 1.0:
            lo = tau
        else:
            hi = tau
        if hi - lo <= 1e-15 * (fabs(tau) if fabs(tau) > 1.0 else 1.0):
            break
    tau = 0.5 * (lo + hi)
    free_sum = 0.0
    nf = 0.0
    ncap = 0.0
    for i in range(m):
        xi = x[i] - tau
        if xi >= cap:
            ncap += 1.0
        elif xi > 0.0:
            nf += 1.0
            free_sum += x[i]
    if nf > 0.0:
        tau = (free_sum + ncap * cap - 1.0) / nf
    for i in range(m):
        xi = x[i] - tau
        if xi > cap:
            xi = cap
        elif xi < 0.0:
            xi = 0.0
        out[i] = xi
    return tau


def project_capped_simplex(x, double cap):
    """Euclidean projection onto {a : 0 <= a_i <= cap, sum a = 1}."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=float)
    out = np.empty(xv.shape[0])
    cdef double[::1] ov = out
    with nogil:
        _project(&xv[0], xv.shape[0], cap, &ov[0])
    return out


def pgd_fixed_eta(g, double mu, double eta, double cap, a0, double tol=1e-9, long maxiter=100000):
    """Accelerated projected gradient (see ``_pykernels.pgd_fixed_eta``)."""
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=float)
    cdef double[::1] a0v = np.ascontiguousarray(a0, dtype=float)
    cdef Py_ssize_t m = gv.shape[0], i
    a_o = np.empty(m)
    cdef double[::1] a = a_o
    cdef double[::1] y = np.empty(m), an = np.empty(m), grad = np.empty(m), tmp = np.empty(m)
    cdef double theta = 1.0, theta_new, t, pg = INFINITY, ny, fy, fn, nn, lin, dd, dg, restart
    cdef long it = 0
    with nogil:
        _project(&a0v[0], m, cap, &a[0])
        nn = 0.0
        for i in range(m):
            y[i] = a[i]
            nn += a[i] * a[i]
        t = sqrt(nn) / mu
        for it in range(1, maxiter + 1):
            ny = 0.0
            dg = 0.0
            for i in range(m):
                ny += y[i] * y[i]
                dg += y[i] * gv[i]
            ny = sqrt(ny)
            fy = mu * ny + eta * dg
            for i in range(m):
                grad[i] = mu * y[i] / ny + eta * gv[i]
            while True:
                for i in range(m):
                    tmp[i] = y[i] - t * grad[i]
                _project(&tmp[0], m, cap, &an[0])
                nn = 0.0
                dg = 0.0
                lin = 0.0
                dd = 0.0
                for i in range(m):
                    nn += an[i] * an[i]
                    dg += an[i] * gv[i]
                    lin += grad[i] * (an[i] - y[i])
                    dd += (an[i] - y[i]) * (an[i] - y[i])
                fn = mu * sqrt(nn) + eta * dg
                if fn <= fy + lin + dd / (2.0 * t) + 1e-15 * fabs(fy):
                    break
                t *= 0.5
            pg = sqrt(dd) / t
            restart = 0.0
            for i in range(m):
                restart += (y[i] - an[i]) * (an[i] - a[i])
            if restart > 0.0:
                theta = 1.0
                for i in range(m):
                    y[i] = an[i]
            else:
                theta_new = 0.5 * (1.0 + sqrt(1.0 + 4.0 * theta * theta))
                for i in range(m):
                    y[i] = an[i] + ((theta - 1.0) / theta_new) * (an[i] - a[i])
                theta = theta_new
            for i in range(m):
                a[i] = an[i]
            if pg < tol:
                break
            t *= 1.5
    return a_o, it, pg
