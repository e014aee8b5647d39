import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from hetdp_market.core_types import DegenerateAllocation, InvalidEta
from hetdp_market.gen_bounds import (
    BoundConfig,
    excess_risk,
    mu_constant,
    proxy_loss,
    sigma_constant,
    v,
    v_inverse,
)
from hetdp_market.sensitivity import Uniform


def test_v_values():
    assert v(2.0, 1) == pytest.approx(math.exp(-1), rel=1e-15)
    assert v(0.0, 7) == 1.0
    assert v(2.0, 2) == pytest.approx(2 * math.exp(-1), rel=1e-15)


@pytest.mark.parametrize("n", [1, 2, 5, 30, 200])
def test_v_matches_gamma_survival(n):
    # P(Poisson(t/2) < n) = P(Gamma(n) > t/2)
    for t in [0.1, 1.0, 7.3, 50.0, 300.0]:
        assert v(t, n) == pytest.approx(stats.gamma.sf(t / 2, n), rel=1e-10, abs=1e-300)


def test_v_large_n_no_overflow():
    val = v(2 * 10000.0, 10000)
    assert 0.4 < val < 0.6


@settings(max_examples=80, deadline=None)
@given(st.floats(0.01, 80), st.floats(0.01, 5), st.integers(1, 30))
def test_v_monotone(t, dt, n):
    assert v(t + dt, n) <= v(t, n)
    assert v(t, n + 1) >= v(t, n)
    # strict wherever the values are resolvable below 1
    if v(t, n + 1) < 1 - 1e-12:
        assert v(t + dt, n) < v(t, n)
        assert v(t, n + 1) > v(t, n)


@pytest.mark.parametrize("n", [1, 2, 5, 30])
@pytest.mark.parametrize("dp", [0.9, 0.5, 0.1, 0.01])
def test_v_inverse_round_trip(n, dp):
    assert abs(v(v_inverse(dp, n), n) - dp) < 1e-10


def test_v_inverse_n1_exact():
    assert v_inverse(math.exp(-1), 1) == pytest.approx(2.0, abs=1e-12)
    assert v_inverse(0.5, 1) == pytest.approx(2 * math.log(2), abs=1e-12)
    for dp in [0.9, 0.3, 0.01]:
        assert abs(v_inverse(dp, 1) + 2 * math.log(dp)) <= 1e-12


def test_v_inverse_agrees_with_gamma_isf():
    for n in [2, 5, 30]:
        assert v_inverse(0.1, n) == pytest.approx(2 * stats.gamma.isf(0.1, n), rel=1e-10)


def test_mu_constant():
    e1 = math.exp(-1)
    assert mu_constant(BoundConfig(delta=e1, beta=1.0)) == pytest.approx(
        3 / math.sqrt(2) * math.log(1 + math.e) + 1 / math.log(2), rel=1e-14)
    assert mu_constant(BoundConfig(delta=e1, beta=1.0)) == pytest.approx(4.2285, abs=5e-5)
    # (3 / sqrt 2) ln 2 = 1.470387...
    assert mu_constant(BoundConfig(delta=e1, delta_prime=0.5, beta=0.0)) == pytest.approx(
        3 / math.sqrt(2) * math.log(2), rel=1e-14)


def test_sigma_constant():
    e1 = math.exp(-1)
    assert sigma_constant(BoundConfig(delta=e1, delta_prime=e1, beta=1.0, n=1)) == pytest.approx(
        (6 / math.sqrt(2) + 1) * 4, rel=1e-11)
    assert sigma_constant(BoundConfig(delta=e1, delta_prime=e1, beta=1.0, n=1)) == pytest.approx(20.9706, abs=5e-5)
    assert sigma_constant(BoundConfig(beta=0.0)) == 0.0
    vals = [sigma_constant(BoundConfig(n=n)) for n in (1, 2, 5, 10)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_bound_config_guards():
    with pytest.raises(ValueError):
        BoundConfig(delta=1.0)
    with pytest.raises(ValueError):
        BoundConfig(delta=0.6, delta_prime=0.5)


def test_excess_risk_values():
    m = 9
    assert excess_risk(np.full(m, 1 / m), 1.0, 1.0, 0.0) == pytest.approx(1 / 3)
    assert excess_risk(np.eye(5)[0], 1.0, 1.0, 0.0) == 1.0
    assert excess_risk(np.full(4, 0.25), 2.0, 1.0, 1.0) == pytest.approx(1.0)
    with pytest.raises(InvalidEta):
        excess_risk(np.full(4, 0.25), 0.0, 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2 ** 32 - 1))
def test_excess_risk_minimal_at_uniform(m, seed):
    gen = np.random.default_rng(seed)
    u = np.full(m, 1 / m)
    d = gen.normal(size=m)
    d -= d.mean()
    a = u + 0.5 / m * d / np.abs(d).max()
    assert excess_risk(a, 1.0, 1.0, 1.0) >= excess_risk(u, 1.0, 1.0, 1.0) - 1e-15


def test_proxy_loss_values():
    d = Uniform(0.0, 2.0)
    # psi(0.5) = 1
    assert proxy_loss(np.array([0.5]), np.array([1.0]), 1, 1, 1, d) == pytest.approx(3.0)
    assert proxy_loss(np.array([0.5, 0.7]), np.zeros(2), 1, 1, 1, d) == math.inf
    with pytest.raises(DegenerateAllocation):
        proxy_loss(np.array([0.5]), np.zeros(1), 1, 1, 1, d, strict=True)


def test_proxy_loss_homogeneous_minimum():
    # psi = 1 everywhere on a point mass approximated by c = 0.5 under U(0, 2)
    m, mu, sigma, gamma = 25, 1.3, 0.7, 0.4
    c = np.full(m, 0.5)
    d = Uniform(0.0, 2.0)
    closed = mu / math.sqrt(m) + 2 * math.sqrt(sigma * gamma)
    eps = np.full(m, math.sqrt(sigma / gamma) / m)
    assert proxy_loss(c, eps, mu, sigma, gamma, d) == pytest.approx(closed, rel=1e-14)
    res = optimize.minimize_scalar(lambda eta: proxy_loss(c, np.full(m, eta / m), mu, sigma, gamma, d),
                                   bounds=(1e-3, 100), method="bounded", options={"xatol": 1e-10})
    assert res.fun == pytest.approx(closed, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.floats(0.05, 20), st.integers(0, 2 ** 32 - 1))
def test_proxy_loss_scaling_identity(m, s, seed):
    gen = np.random.default_rng(seed)
    d = Uniform(0.0, 1.0)
    c = gen.uniform(size=m)
    eps = gen.uniform(0.1, 1.0, size=m)
    mu, sigma, gamma = 1.1, 0.9, 0.7
    eta = eps.sum()
    a = eps / eta
    pay = gamma * np.sum(eps * d.psi(c))
    lhs = proxy_loss(c, s * eps, mu, sigma, gamma, d)
    rhs = mu * np.linalg.norm(a) + sigma / (s * eta) + s * pay
    assert lhs == pytest.approx(rhs, rel=1e-12)
