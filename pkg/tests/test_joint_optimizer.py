import math

import numpy as np
import pytest

from hetdp_market.core_types import HyperParams, RngSpec, normalize_dataset
from hetdp_market.joint_optimizer import (
    convexity_margin,
    draw_joint_noise,
    eps_avg_grid,
    fit_joint,
    joint_gradient,
    joint_objective,
    linear_convergence_probe,
    raw_noise,
)
from hetdp_market.offline_mechanism import project_capped_simplex
from hetdp_market.sensitivity import Uniform

M, N = 50, 4
# 2 * Lambda * mu - m = 10 > 0
P = HyperParams(mu=30.0, sigma=1.0, gamma=1.0, lambda_reg=1.0, k=2.0)


@pytest.fixture(scope="module")
def inst():
    gen = np.random.default_rng(0)
    X = gen.normal(size=(M, N))
    D = normalize_dataset(X, np.sign(X[:, 0] + 0.1 * gen.normal(size=M)))
    dist = Uniform(0, 1)
    c = dist.sample(M, RngSpec(1))
    noise = draw_joint_noise(N, RngSpec(2))
    return D, c, dist, noise


def _point(gen, m=M, n=N, cap=P.k / M):
    return gen.normal(size=n), project_capped_simplex(gen.uniform(size=m), cap)


def test_margin():
    assert convexity_margin(HyperParams(lambda_reg=10, mu=100), 1000) == 1000
    assert convexity_margin(P, M) == 10


def test_objective_uniform_zero(inst):
    D, c, dist, noise = inst
    e = 0.05
    eta = M * e
    a = np.full(M, 1 / M)
    expected = math.log(2) + P.mu / M + P.sigma / eta + P.gamma * eta * np.mean(dist.psi(c))
    assert joint_objective(D, np.zeros(N), a, e, noise, P, c, dist) == pytest.approx(expected, rel=1e-13)
    assert joint_objective(D, np.zeros(N), a, 0.0, noise, P, c, dist) == math.inf


def test_objective_dual_path(inst):
    D, c, dist, noise = inst
    gen = np.random.default_rng(3)
    w, a = _point(gen)
    e = 0.2
    eta = M * e
    b = raw_noise(noise)
    total = 0.0
    for i in range(M):
        z = sum(w[j] * D.features[i, j] for j in range(N))
        total += a[i] * math.log1p(math.exp(-D.labels[i] * z))
        total += P.mu * a[i] ** 2 + P.gamma * eta * a[i] * float(dist.psi(c[i]))
    total += sum(2 * b[j] * w[j] / eta + 0.5 * P.lambda_reg * w[j] ** 2 for j in range(N)) + P.sigma / eta
    assert joint_objective(D, w, a, e, noise, P, c, dist) == pytest.approx(total, rel=1e-12)


def test_raw_noise_relation():
    nz = draw_joint_noise(5, RngSpec(4))
    assert nz.eta_used == 2.0
    np.testing.assert_allclose(raw_noise(nz), nz.b_prime)


def test_gradient_central_differences(inst):
    D, c, dist, noise = inst
    gen = np.random.default_rng(5)
    for _ in range(20):
        w, a = _point(gen)
        e = float(np.exp(gen.uniform(np.log(1e-3), 0)))
        gw, ga = joint_gradient(D, w, a, e, noise, P, c, dist)
        g = np.concatenate([gw, ga])
        x = np.concatenate([w, a])
        h = 1e-6
        fd = np.empty_like(x)
        for j in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd[j] = (joint_objective(D, xp[:N], xp[N:], e, noise, P, c, dist)
                     - joint_objective(D, xm[:N], xm[N:], e, noise, P, c, dist)) / (2 * h)
        assert np.linalg.norm(fd - g) / np.linalg.norm(g) < 1e-5


def test_second_directional_derivative_nonnegative(inst):
    D, c, dist, noise = inst
    gen = np.random.default_rng(6)
    h = 1e-4
    for _ in range(50):
        w, a = _point(gen)
        e = float(np.exp(gen.uniform(np.log(1e-3), 0)))
        d = gen.normal(size=N + M)
        d /= np.linalg.norm(d)

        def f(t):
            return joint_objective(D, w + t * d[:N], a + t * d[N:], e, noise, P, c, dist)

        assert (f(h) - 2 * f(0) + f(-h)) / h ** 2 >= -1e-6


# Lambda large enough that the best eps_avg lies inside the grid
PI = HyperParams(mu=5.0, sigma=5.0, gamma=0.1, lambda_reg=1000.0, k=2.0, L=10.0)


def test_two_inits_agree(inst):
    D, c, dist, noise = inst
    s1 = fit_joint(D, c, PI, dist, RngSpec(2), noise=noise)
    j = int(np.argmin(s1.grid_objectives))
    assert 0 < j < s1.grid.size - 1
    gen = np.random.default_rng(7)
    for _ in range(2):
        # a single grid point, so the random start is not replaced by a warm start
        s2 = fit_joint(D, c, PI, dist, RngSpec(2), noise=noise, grid=[s1.eps_avg],
                       init=(3 * gen.normal(size=N), gen.uniform(size=M)))
        assert s2.converged
        assert abs(s1.objective - s2.objective) <= 1e-6 * max(1.0, abs(s1.objective))
        np.testing.assert_allclose(s2.a, s1.a, atol=1e-4)
    assert s1.converged
    assert s1.privacy_leak_caveat
    a = s1.a
    assert abs(a.sum() - 1) < 1e-12 and a.min() >= 0 and a.max() <= PI.k / M + 1e-15
    assert 0 < s1.eps_avg <= PI.L
    assert s1.eta == pytest.approx(M * s1.eps_avg)
    np.testing.assert_allclose(s1.epsilon, s1.a * s1.eta)
    assert s1.objective == pytest.approx(s1.grid_objectives.min())


def test_small_lambda_drives_eta_to_grid_bottom(inst):
    # minimising over w leaves -2 |b|^2 / (Lambda eta^2), which beats sigma / eta as eta -> 0
    D, c, dist, noise = inst
    s = fit_joint(D, c, P, dist, RngSpec(2), noise=noise)
    assert s.eps_avg == s.grid[0]
    b = raw_noise(noise)
    eta = s.eta
    assert s.objective < -2 * (b @ b) / (P.lambda_reg * eta ** 2) * 0.9


def test_huge_gamma_picks_smallest(inst):
    D, c, dist, noise = inst
    grid = eps_avg_grid(P.L, 8)
    s = fit_joint(D, c, P.with_(gamma=1e8), dist, RngSpec(2), grid=grid, noise=noise)
    assert s.eps_avg == grid[0]


def test_margin_warning(inst):
    D, c, dist, noise = inst
    p0 = P.with_(mu=M / (2 * P.lambda_reg))
    assert convexity_margin(p0, M) == 0
    with pytest.warns(RuntimeWarning, match="non-convex"):
        fit_joint(D, c, p0, dist, RngSpec(2), grid=eps_avg_grid(P.L, 2), noise=noise)


def test_convergence_probe(inst):
    D, c, dist, noise = inst
    gaps, alpha = linear_convergence_probe(D, c, P, dist, 0.1, RngSpec(2), noise=noise)
    assert 0 < alpha < 1
    ulp = 1e-14 * max(1.0, abs(gaps[0]))
    assert np.all(np.diff(gaps) <= ulp)
    assert gaps[-1] <= ulp or gaps[-1] < 1e-6 * gaps[0]


def test_permutation_invariance(inst):
    D, c, dist, noise = inst
    gen = np.random.default_rng(8)
    w, a = _point(gen)
    perm = gen.permutation(M)
    Dp = normalize_dataset(D.features[perm], D.labels[perm])
    v1 = joint_objective(D, w, a, 0.1, noise, P, c, dist)
    v2 = joint_objective(Dp, w, a[perm], 0.1, noise, P, c[perm], dist)
    assert v2 == pytest.approx(v1, rel=1e-13)


def test_raising_cost_never_raises_weight(inst):
    D, c, dist, noise = inst
    grid = np.array([0.05])
    j = int(np.argmin(c))
    prev = math.inf
    for cj in np.linspace(c[j], 0.99, 6):
        cc = c.copy()
        cc[j] = cj
        s = fit_joint(D, cc, P, dist, RngSpec(2), grid=grid, noise=noise)
        assert s.a[j] <= prev + 1e-8
        prev = s.a[j]


def test_naive_and_gamma_overrides(inst):
    D, c, dist, noise = inst
    grid = eps_avg_grid(P.L, 4)
    s = fit_joint(D, c, P, dist, RngSpec(2), grid=grid, noise=noise, naive=True, gamma=0.0)
    assert s.convexity_margin == -M
    # with mu = sigma = gamma = 0 only the noise term depends on eta, and minimising
    # over w leaves -2 ||b||^2 / (Lambda eta^2), which rises with eta
    assert np.all(np.diff(s.grid_objectives) > 0)
    assert s.eps_avg == grid[0]
