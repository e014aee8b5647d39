"""Privacy-sensitivity distributions, the virtual cost psi(c) = c + F(c)/f(c) and the density of psi(c).

Outside the support we use the conventions that keep the mechanisms well
defined for arbitrary (mis)reports: below the support F = 0 so psi(z) = z,
and above a bounded support psi(z) = +inf (a report no buyer will pay for).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .core_types import DegeneratePdf, EmptyProfile, InvalidData, SensitivityProfile

N_KNOTS = 1024
_SCAN = 4096


class SensitivityDistribution:
    """Base class. Subclasses provide pdf, cdf, dpdf (f'), sampling and the support."""

    family = "base"
    low = 0.0
    high = math.inf

    def __init__(self):
        self._check()
        self._build_table()

    # -- to be provided by subclasses --
    def pdf(self, c):
        raise NotImplementedError

    def cdf(self, c):
        raise NotImplementedError

    def dpdf(self, c):
        raise NotImplementedError

    def _draw(self, gen, m):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    # -- shared machinery --
    @property
    def upper(self):
        """Finite upper end used for tables and scans (a far quantile if the support is unbounded)."""
        return self.high if math.isfinite(self.high) else self._far_quantile()

    def _far_quantile(self):
        raise NotImplementedError

    def _check(self):
        total = integrate.quad(lambda x: float(self.pdf(x)), self.low, self.high, limit=200)[0]
        if abs(total - 1.0) > 1e-8:
            raise InvalidData(f"pdf integrates to {total}, not 1")
        grid = np.linspace(self.low, self.upper, _SCAN)
        psi = self.psi(grid)
        if not np.all(np.diff(psi) > 0):
            raise DegeneratePdf("virtual cost is not strictly increasing on the support")

    def _build_table(self):
        self._knots = np.linspace(self.low, self.upper, N_KNOTS)
        self._psi_knots = self.psi(self._knots)

    def psi(self, c):
        c = np.asarray(c, dtype=float)
        out = np.empty_like(c)
        below = c <= self.low
        above = c > self.high
        inside = ~below & ~above
        out[below] = c[below]
        out[above] = np.inf
        if inside.any():
            ci = c[inside]
            f = self.pdf(ci)
            edge = (f <= 0) & (ci >= self.high)
            if np.any((f <= 0) & ~edge):
                raise DegeneratePdf("zero density inside the support")
            with np.errstate(divide="ignore"):
                out[inside] = np.where(edge, np.inf, ci + self.cdf(ci) / np.where(edge, 1.0, f))
        return out if out.ndim else float(out)

    def psi_prime(self, c):
        c = np.asarray(c, dtype=float)
        f = self.pdf(c)
        return 2.0 - self.cdf(c) * self.dpdf(c) / (f * f)

    def psi_inv(self, x, iters=80):
        """Inverse virtual cost by bisection inside the bracketing table cell.

        Values below psi(low) map to themselves; values above the table map to
        the upper end of the support.
        """
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.empty_like(x)
        lowpsi = self._psi_knots[0]
        below = x <= lowpsi
        above = x >= self._psi_knots[-1]
        out[below] = x[below]
        out[above] = self._knots[-1]
        mid_mask = ~below & ~above
        if mid_mask.any():
            xm = x[mid_mask]
            j = np.searchsorted(self._psi_knots, xm, side="right") - 1
            lo = self._knots[j].copy()
            hi = self._knots[j + 1].copy()
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                go_up = self.psi(mid) < xm
                lo = np.where(go_up, mid, lo)
                hi = np.where(go_up, hi, mid)
            out[mid_mask] = 0.5 * (lo + hi)
        if not math.isfinite(self.high) and above.any():
            # unbounded support: keep solving past the table end
            for i in np.nonzero(above)[0]:
                lo, hi = self._knots[-1], self._knots[-1] * 2.0 + 1.0
                while self.psi(hi) < x[i]:
                    lo, hi = hi, 2.0 * hi
                for _ in range(iters + 40):
                    mid = 0.5 * (lo + hi)
                    if self.psi(mid) < x[i]:
                        lo = mid
                    else:
                        hi = mid
                out[i] = 0.5 * (lo + hi)
        return float(out[0]) if scalar else out

    @property
    def psi_range(self):
        return self.psi(self.low), (self.psi(self.high) if math.isfinite(self.high) else math.inf)

    def psi_pdf(self, x):
        """Density of the random variable psi(c) at x; zero outside the range of psi."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        lo, hi = self.psi_range
        inside = (x >= lo) & (x <= hi)
        if inside.any():
            c = np.atleast_1d(self.psi_inv(x[inside]))
            d = self.psi_prime(c)
            if np.any(d <= 0):
                raise DegeneratePdf("psi' vanishes at an evaluation point")
            out[inside] = self.pdf(c) / d
        return out if out.ndim else float(out)

    def density_at_floor(self):
        """Right limit of f_Psi at the bottom of the range of psi."""
        return float(self.pdf(self.low) / self.psi_prime(self.low))

    def sample(self, m, rng, stream="sensitivities"):
        if m < 1:
            raise EmptyProfile("m must be at least 1")
        return self._draw(rng.generator(stream), int(m))

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class Uniform(SensitivityDistribution):
    family = "uniform"

    def __init__(self, low, high):
        if not (0 <= low < high < math.inf):
            raise InvalidData("uniform needs 0 <= low < high")
        self.low, self.high = float(low), float(high)
        super().__init__()

    def pdf(self, c):
        c = np.asarray(c, dtype=float)
        return np.where((c >= self.low) & (c <= self.high), 1.0 / (self.high - self.low), 0.0)

    def cdf(self, c):
        return np.clip((np.asarray(c, dtype=float) - self.low) / (self.high - self.low), 0.0, 1.0)

    def dpdf(self, c):
        return np.zeros_like(np.asarray(c, dtype=float))

    def psi(self, c):
        c = np.asarray(c, dtype=float)
        out = np.where(c <= self.low, c, np.where(c > self.high, np.inf, 2.0 * c - self.low))
        return out if out.ndim else float(out)

    def psi_inv(self, x, iters=None):
        # psi is affine on the support, so the table lookup is replaced by its exact inverse
        x = np.asarray(x, dtype=float)
        out = np.where(x <= self.low, x, np.minimum(0.5 * (x + self.low), self.high))
        return out if out.ndim else float(out)

    def _draw(self, gen, m):
        return gen.uniform(self.low, self.high, size=m)

    def to_dict(self):
        return {"family": "uniform", "low": self.low, "high": self.high}


class Exponential(SensitivityDistribution):
    family = "exponential"

    def __init__(self, rate):
        if not rate > 0:
            raise InvalidData("rate must be positive")
        self.rate = float(rate)
        self.low, self.high = 0.0, math.inf
        super().__init__()

    def _far_quantile(self):
        return -math.log(1e-12) / self.rate

    def pdf(self, c):
        c = np.asarray(c, dtype=float)
        return np.where(c >= 0, self.rate * np.exp(-self.rate * np.maximum(c, 0.0)), 0.0)

    def cdf(self, c):
        return -np.expm1(-self.rate * np.maximum(np.asarray(c, dtype=float), 0.0))

    def dpdf(self, c):
        return -self.rate * self.pdf(c)

    def psi(self, c):
        # closed form c + (e^{rc} - 1)/r avoids 0/0 far in the tail
        c = np.asarray(c, dtype=float)
        out = np.where(c <= 0, c, c + np.expm1(self.rate * np.maximum(c, 0.0)) / self.rate)
        return out if out.ndim else float(out)

    def psi_prime(self, c):
        return 1.0 + np.exp(self.rate * np.asarray(c, dtype=float))

    def _draw(self, gen, m):
        return gen.exponential(1.0 / self.rate, size=m)

    def to_dict(self):
        return {"family": "exponential", "rate": self.rate}


class PiecewiseLinearPdf(SensitivityDistribution):
    """Density linear between knots (x_j, p_j), zero outside [x_0, x_last]."""

    family = "piecewise_linear"

    def __init__(self, knots):
        k = np.asarray(knots, dtype=float)
        if k.ndim != 2 or k.shape[1] != 2 or k.shape[0] < 2:
            raise InvalidData("knots must be a list of (x, p) pairs")
        self.x, self.p = k[:, 0].copy(), k[:, 1].copy()
        if np.any(np.diff(self.x) <= 0) or self.x[0] < 0 or np.any(self.p < 0):
            raise InvalidData("knots need increasing x >= 0 and p >= 0")
        if np.any(self.p[1:-1] <= 0):
            raise DegeneratePdf("zero density at an interior knot")
        self.low, self.high = float(self.x[0]), float(self.x[-1])
        seg = 0.5 * (self.p[1:] + self.p[:-1]) * np.diff(self.x)
        self._F = np.concatenate([[0.0], np.cumsum(seg)])
        self._slope = np.diff(self.p) / np.diff(self.x)
        super().__init__()

    def _seg(self, c):
        return np.clip(np.searchsorted(self.x, c, side="right") - 1, 0, self.x.size - 2)

    def pdf(self, c):
        c = np.asarray(c, dtype=float)
        return np.where((c >= self.low) & (c <= self.high), np.interp(c, self.x, self.p), 0.0)

    def cdf(self, c):
        c = np.clip(np.asarray(c, dtype=float), self.low, self.high)
        j = self._seg(c)
        d = c - self.x[j]
        return self._F[j] + self.p[j] * d + 0.5 * self._slope[j] * d * d

    def dpdf(self, c):
        c = np.asarray(c, dtype=float)
        return np.where((c >= self.low) & (c <= self.high), self._slope[self._seg(c)], 0.0)

    def _draw(self, gen, m):
        u = gen.uniform(size=m)
        j = np.clip(np.searchsorted(self._F, u, side="right") - 1, 0, self.x.size - 2)
        r = u - self._F[j]
        s, p0 = self._slope[j], self.p[j]
        # solve p0 d + s d^2 / 2 = r for the smallest non-negative d
        disc = np.sqrt(np.maximum(p0 * p0 + 2.0 * s * r, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(np.abs(s) > 1e-14, 2.0 * r / (p0 + disc), r / p0)
        return np.clip(self.x[j] + d, self.low, self.high)

    def to_dict(self):
        return {"family": "piecewise_linear", "knots": np.column_stack([self.x, self.p]).tolist()}


def from_dict(d):
    fam = str(d.get("family", "")).lower()
    if fam == "uniform":
        return Uniform(d["low"], d["high"])
    if fam == "exponential":
        return Exponential(d["rate"])
    if fam in ("piecewise_linear", "piecewiselinear", "piecewise_linear_pdf"):
        return PiecewiseLinearPdf(d["knots"])
    raise InvalidData(f"unknown distribution family {fam!r}")


def virtual_cost(dist, c):
    return dist.psi(c)


def virtual_cost_pdf(dist, x):
    return dist.psi_pdf(x)


def sample_sensitivities(dist, m, rng):
    return SensitivityProfile(dist.sample(m, rng))


def check_assumption2(dist):
    """Whether 0 < f(c) < inf on some [0, c1]; returns the largest c1 verified on a scan grid."""
    if dist.low > 0:
        return {"holds": False, "c1": 0.0}
    grid = np.linspace(0.0, dist.upper, _SCAN)
    f = dist.pdf(grid)
    ok = (f > 0) & np.isfinite(f)
    if not ok[0]:
        return {"holds": False, "c1": 0.0}
    bad = np.nonzero(~ok)[0]
    c1 = grid[bad[0] - 1] if bad.size else grid[-1]
    return {"holds": bool(c1 > 0), "c1": float(c1)}
