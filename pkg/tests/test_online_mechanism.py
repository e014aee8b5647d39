import math
from fractions import Fraction

import numpy as np
import pytest

from hetdp_market.core_types import HyperParams, RngSpec, normalize_dataset
from hetdp_market.gen_bounds import proxy_loss
from hetdp_market.offline_mechanism import solve_kkt
from hetdp_market.online_mechanism import (
    OnlineConfig,
    OnlineMechanism,
    cutoff_price,
    online_allocation,
    online_cutoff_report,
    online_epsilon,
    online_payment,
    online_payment_uniform,
    run_online_mechanism,
)
from hetdp_market.sensitivity import Uniform


def test_config_guards():
    with pytest.raises(ValueError):
        OnlineConfig(0)
    with pytest.raises(ValueError):
        OnlineConfig(5, density_at_zero=0.0)
    with pytest.raises(ValueError):
        OnlineConfig(5, xi=1.5)


def test_cutoff_price_values():
    p = HyperParams()
    cfg = OnlineConfig(100, density_at_zero=0.5)
    assert cutoff_price(p, cfg) == pytest.approx(math.sqrt(1 / 50), rel=1e-15)
    assert cutoff_price(p, OnlineConfig(400, density_at_zero=0.5)) == pytest.approx(cutoff_price(p, cfg) / 2)
    assert cutoff_price(p.with_(mu=2.0), cfg) == pytest.approx(2 * cutoff_price(p, cfg))


def test_density_default_is_floor_value():
    # psi(c) = 2 c - 1 on U(1, 5) is uniform on [1, 9]
    cfg = OnlineConfig(10)
    assert cfg.density(Uniform(1, 5)) == pytest.approx(1 / 8)
    assert cfg.density(Uniform(0, 1)) == pytest.approx(0.5)


def test_epsilon_value_exact_arithmetic():
    # psi(0) = 0 under U(0, 1); compare to the formula evaluated with rationals
    p = HyperParams()
    cfg = OnlineConfig(100, density_at_zero=0.5)
    lam = cutoff_price(p, cfg)
    F = Fraction
    lam_sq = F(1, 50)
    # lam^{-5/2} = lam_sq^{-5/4}; keep the irrational parts in floats at the end
    scale = 2 * math.sqrt(3) / (float(F(1, 2)) ** 1.5 * 1000)
    expected = scale * float(lam_sq ** -1) * lam ** -0.5
    got = online_epsilon(0.0, p, cfg, Uniform(0, 1))
    assert got == pytest.approx(expected, rel=1e-13)
    assert got == pytest.approx(2 * math.sqrt(3) * lam / (0.5 ** 1.5 * 1000 * lam ** 3.5), rel=1e-13)


def test_epsilon_cutoff_behaviour():
    d = Uniform(0, 1)
    p = HyperParams()
    cfg = OnlineConfig(100)
    lam = cutoff_price(p, cfg, d)
    z_cut = online_cutoff_report(p, cfg, d)
    assert p.gamma * d.psi(z_cut) == pytest.approx(lam)
    assert online_epsilon(z_cut, p, cfg, d) == 0.0
    assert online_epsilon(0.9, p, cfg, d) == 0.0
    zs = np.linspace(0, 1, 400)
    e = online_epsilon(zs, p, cfg, d)
    assert np.all(np.diff(e) <= 0)
    # continuity: the step size bounds the jumps
    assert np.max(np.abs(np.diff(e))) <= e[0] * 2 * (zs[1] / z_cut) + 1e-15


def test_payment_matches_closed_form():
    d = Uniform(0, 1)
    p = HyperParams()
    cfg = OnlineConfig(100)
    z_cut = online_cutoff_report(p, cfg, d)
    for c in np.linspace(0, 1, 31):
        assert online_payment(c, p, cfg, d) == pytest.approx(online_payment_uniform(c, p, cfg, d), abs=1e-8)
    assert online_payment(min(1.0, z_cut * 1.01), p, cfg, d) == 0.0
    d2 = Uniform(1, 5)
    cfg2 = OnlineConfig(50)
    p2 = HyperParams(gamma=0.3)
    for c in np.linspace(1, 5, 13):
        assert online_payment(c, p2, cfg2, d2) == pytest.approx(online_payment_uniform(c, p2, cfg2, d2), abs=1e-8)


def test_payment_monotone():
    d = Uniform(0, 1)
    p = HyperParams()
    cfg = OnlineConfig(100)
    t = [online_payment(c, p, cfg, d) for c in np.linspace(0, 1, 60)]
    assert np.all(np.diff(t) <= 1e-15)
    assert min(t) >= 0


def test_decisions_causal_and_consistent():
    d = Uniform(0, 1)
    p = HyperParams()
    cfg = OnlineConfig(30)
    c = d.sample(30, RngSpec(1))
    perm = np.concatenate([c[:10], np.random.default_rng(0).permutation(c[10:])])
    m1, m2 = OnlineMechanism(p, cfg, d), OnlineMechanism(p, cfg, d)
    r1 = [m1.decide(x) for x in c]
    r2 = [m2.decide(x) for x in perm]
    assert r1[:10] == r2[:10]
    for dec in r1:
        assert (dec.epsilon == 0) == (dec.payment == 0)
        assert dec.accepted == (dec.epsilon > 0)
    with pytest.raises(ValueError):
        m1.decide(0.1)


def _data(m, seed=0):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(m, 3))
    return normalize_dataset(X, np.sign(X[:, 0] + 0.1))


def test_run_online_degenerate():
    d = Uniform(0, 1)
    out = run_online_mechanism(_data(5), np.full(5, 0.99), HyperParams(), OnlineConfig(5), d, RngSpec(0))
    assert out.allocation is None and out.diagnostics["degenerate"]
    assert np.all(out.payments.t == 0)


def test_run_online_homogeneous():
    d = Uniform(0, 1)
    cfg = OnlineConfig(20)
    out = run_online_mechanism(_data(8), np.full(8, 0.01), HyperParams(), cfg, d, RngSpec(0))
    e1 = online_epsilon(0.01, HyperParams(), cfg, d)
    np.testing.assert_allclose(out.allocation.a, 1 / 8)
    assert out.allocation.eta == pytest.approx(8 * e1)
    assert out.diagnostics["fit_converged"]


def test_run_online_widens_cap():
    d = Uniform(0, 1)
    c = np.array([0.01, 0.02, 0.9, 0.95, 0.99, 0.97])
    out = run_online_mechanism(_data(6), c, HyperParams(k=1.0), OnlineConfig(6), d, RngSpec(0))
    diag = out.diagnostics
    assert diag["k_widened"] >= out.allocation.a.max() * 6 - 1e-12
    assert diag["feasible"]


def test_run_online_guards():
    d = Uniform(0, 1)
    with pytest.raises(ValueError):
        run_online_mechanism(_data(5), np.full(5, 0.1), HyperParams(), OnlineConfig(4), d, RngSpec(0))
    with pytest.raises(ValueError):
        run_online_mechanism(_data(5), np.full(4, 0.1), HyperParams(), OnlineConfig(5), d, RngSpec(0))


@pytest.mark.parametrize("m", [100, 1000])
def test_competitive_ratio_at_least_one(m):
    d = Uniform(0, 1)
    p = HyperParams(k=m)
    for s in range(5):
        c = d.sample(m, RngSpec(s))
        eps_on = online_allocation(c, p, OnlineConfig(m), d).epsilon
        on = proxy_loss(c, eps_on, p.mu, p.sigma, p.gamma, d)
        off = solve_kkt(c, p, d).loss
        assert on / off >= 1 - 1e-9
