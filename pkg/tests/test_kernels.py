import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from hetdp_market import _kernels


def _project_oracle(x, cap):
    """Bisection on the shift tau of clip(x - tau, 0, cap)."""
    lo, hi = x.min() - cap - 1.0, x.max() + 1.0
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if np.clip(x - mid, 0, cap).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.clip(x - 0.5 * (lo + hi), 0, cap)


def _loss(a, g, mu, sigma):
    return mu * np.linalg.norm(a) + 2 * math.sqrt(sigma * max(a @ g, 1e-300))


def _slsqp_oracle(g, mu, sigma, cap, starts=8, seed=0):
    """Best of several SLSQP runs on the capped simplex."""
    gen = np.random.default_rng(seed)
    m = g.size
    best = math.inf
    for s in range(starts):
        x0 = np.full(m, 1 / m) if s == 0 else _project_oracle(gen.dirichlet(np.ones(m)), cap)
        res = optimize.minimize(lambda a: _loss(a, g, mu, sigma), x0, method="SLSQP",
                                bounds=[(0, cap)] * m,
                                constraints=[{"type": "eq", "fun": lambda a: a.sum() - 1}],
                                options={"ftol": 1e-14, "maxiter": 2000})
        a = _project_oracle(res.x, cap)
        best = min(best, _loss(a, g, mu, sigma))
    return best


def test_backend_selection():
    assert _kernels.BACKEND in ("python", "cython")
    assert "python" in _kernels.backends()


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 40), st.floats(0.0, 1.0), st.integers(0, 2 ** 32 - 1))
def test_projection_matches_oracle(m, frac, seed):
    gen = np.random.default_rng(seed)
    cap = 1.0 / m + frac * (1 - 1.0 / m)
    x = gen.normal(scale=gen.uniform(0.01, 5), size=m)
    for name, mod in _kernels.backends().items():
        p = mod.project_capped_simplex(x, cap)
        assert abs(p.sum() - 1) < 1e-12
        assert p.min() >= 0 and p.max() <= cap + 1e-15
        np.testing.assert_allclose(p, _project_oracle(x, cap), atol=1e-10, err_msg=name)


def test_projection_idempotent(kernels):
    gen = np.random.default_rng(1)
    x = gen.normal(size=20)
    p = kernels.project_capped_simplex(x, 0.1)
    np.testing.assert_allclose(kernels.project_capped_simplex(p, 0.1), p, atol=1e-15)


@pytest.mark.parametrize("seed", range(12))
def test_capped_path_matches_slsqp(kernels, seed):
    gen = np.random.default_rng(seed)
    m = int(gen.integers(3, 12))
    g = np.sort(gen.uniform(0.05, 2.0, size=m))
    mu, sigma = gen.uniform(0.2, 3), gen.uniform(0.2, 3)
    cap = gen.uniform(1.0 / m, 1.0) if seed % 2 else 2.0 / m
    loss = kernels.capped_path(g, mu, sigma, cap)[0]
    assert loss <= _slsqp_oracle(g, mu, sigma, cap) + 1e-9
    assert loss >= _slsqp_oracle(g, mu, sigma, cap) - 1e-6


def test_capped_path_reconstructs_loss(kernels):
    gen = np.random.default_rng(4)
    g = np.sort(gen.uniform(0.1, 1.0, size=15))
    mu, sigma, cap = 1.0, 1.0, 2 / 15
    loss, v, u, c, j2, _ = kernels.capped_path(g, mu, sigma, cap)
    a = np.zeros(15)
    a[:c] = cap
    a[c:j2] = np.clip(u - v * g[c:j2], 0, cap)
    assert abs(a.sum() - 1) < 1e-10
    assert _loss(a / a.sum(), g, mu, sigma) == pytest.approx(loss, rel=1e-10)


def test_kkt_matches_uncapped_path(kernels):
    gen = np.random.default_rng(2)
    for _ in range(20):
        m = int(gen.integers(2, 30))
        g = np.sort(gen.uniform(0.0, 3.0, size=m))
        mu, sigma = gen.uniform(0.1, 5), gen.uniform(0.1, 5)
        r = kernels.kkt_batch(g[None, :], mu, sigma)
        path = kernels.capped_path(g, mu, sigma, 1.0)[0]
        assert r["loss"][0] == pytest.approx(path, rel=1e-10)


def test_kkt_loss_matches_allocation(kernels):
    gen = np.random.default_rng(5)
    g = np.sort(gen.uniform(0.1, 2.0, size=10))
    mu, sigma = 2.0, 0.5
    r = kernels.kkt_batch(g[None, :], mu, sigma)
    lam = r["lam"][0]
    w = np.maximum(lam - g, 0)
    a = w / w.sum()
    assert _loss(a, g, mu, sigma) == pytest.approx(r["loss"][0], rel=1e-12)
    assert r["k_active"][0] == (w > 0).sum()
    assert r["lam_smallest"][0] <= lam
    assert r["n_roots"][0] >= 1


def test_kkt_batch_rows_independent(kernels):
    gen = np.random.default_rng(6)
    G = np.sort(gen.uniform(0, 1, size=(7, 9)), axis=1)
    G[3, -2:] = np.inf
    r = kernels.kkt_batch(G, 1.0, 1.0)
    for i in range(7):
        ri = kernels.kkt_batch(G[i:i + 1], 1.0, 1.0)
        assert ri["lam"][0] == pytest.approx(r["lam"][i], rel=1e-14)
        assert ri["loss"][0] == pytest.approx(r["loss"][i], rel=1e-14)


def test_kkt_homogeneous(kernels):
    # psi0 = 1, mu = sigma = gamma = 1, m = 100: loss 1/sqrt(m) + 2
    r = kernels.kkt_batch(np.ones((1, 100)), 1.0, 1.0)
    assert r["loss"][0] == pytest.approx(2.1, rel=1e-12)


def test_pgd_fixed_eta_matches_oracle(kernels):
    gen = np.random.default_rng(7)
    m = 8
    g = gen.uniform(0.1, 1.0, size=m)
    mu, eta, cap = 1.5, 2.0, 0.3

    def f(a):
        return mu * np.linalg.norm(a) + eta * (a @ g)

    a, it, pg = kernels.pgd_fixed_eta(g, mu, eta, cap, np.full(m, 1 / m), tol=1e-9)
    assert pg < 1e-9
    res = optimize.minimize(f, np.full(m, 1 / m), method="SLSQP", bounds=[(0, cap)] * m,
                            constraints=[{"type": "eq", "fun": lambda x: x.sum() - 1}],
                            options={"ftol": 1e-15, "maxiter": 1000})
    assert f(a) <= f(_project_oracle(res.x, cap)) + 1e-10


def test_capped_curve_monotone(kernels):
    others = np.sort(np.random.default_rng(8).uniform(0, 2, size=12))
    gz = np.linspace(0, 3, 60)
    eps, eta, cut = kernels.capped_curve(others, gz, 1.0, 1.0, 2 / 13)
    assert np.all(np.diff(eps) <= 1e-12)
    assert eps[-1] == 0.0


@pytest.mark.skipif(len(_kernels.backends()) < 2, reason="compiled extension not built")
def test_backend_parity():
    py, cy = _kernels.backends()["python"], _kernels.backends()["cython"]
    gen = np.random.default_rng(9)
    for _ in range(30):
        m = int(gen.integers(2, 40))
        g = np.sort(gen.uniform(0, 2, size=m))
        mu, sigma = gen.uniform(0.1, 4), gen.uniform(0.1, 4)
        cap = max(1.0 / m, gen.uniform(0, 1))
        a, b = py.kkt_batch(g[None], mu, sigma), cy.kkt_batch(g[None], mu, sigma)
        for key in ("lam", "loss", "lam_smallest", "S1", "S2"):
            np.testing.assert_allclose(a[key], b[key], rtol=1e-12)
        np.testing.assert_array_equal(a["k_active"], b["k_active"])
        np.testing.assert_array_equal(a["n_roots"], b["n_roots"])
        pa, pb = py.capped_path(g, mu, sigma, cap), cy.capped_path(g, mu, sigma, cap)
        np.testing.assert_allclose(pa[:3], pb[:3], rtol=1e-12)
        assert pa[3:] == pb[3:]
        x = gen.normal(size=m)
        np.testing.assert_allclose(py.project_capped_simplex(x, cap), cy.project_capped_simplex(x, cap),
                                   atol=1e-15)
        gz = np.linspace(0, 2.5, 7)
        for u, v in zip(py.capped_curve(g, gz, mu, sigma, cap), cy.capped_curve(g, gz, mu, sigma, cap)):
            np.testing.assert_allclose(u, v, rtol=1e-11)
        ea = py.pgd_fixed_eta(g, mu, 1.0, cap, np.full(m, 1 / m), 1e-9)[0]
        eb = cy.pgd_fixed_eta(g, mu, 1.0, cap, np.full(m, 1 / m), 1e-9)[0]
        np.testing.assert_allclose(ea, eb, atol=1e-7)
