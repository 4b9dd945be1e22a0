import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qsplab.energy import (SOBOLEV_EXACT, EnergyFunctional, I_eps, J, J_trunc, PhiCache,
                           default_profile, find_e_T, find_t_max, grad_J, grad_J_trunc,
                           sobolev_constant, thresholds)
from qsplab.exceptions import BracketError, ConfigError
from qsplab.grid import build_uniform, inner_h1, norm_h1
from qsplab.model import ModelParams, PowerTerm


@pytest.fixture(scope="module")
def g():
    return build_uniform(12.0, 300)


def random_pair(g, rng, amp=1.5):
    u = amp * np.abs(rng.standard_normal(g.size)) * np.exp(-0.3 * g.nodes)
    v = rng.standard_normal(g.size) * np.exp(-0.2 * g.nodes)
    u[-1] = v[-1] = 0.0
    return u, v


def central(fn, u, v, h=1e-6):
    return (fn(u + h * v) - fn(u - h * v)) / (2 * h)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 1.0]))
def test_gradients_match_central_differences(seed, eps):
    rng = np.random.default_rng(seed)
    g = build_uniform(12.0, 300)
    m = ModelParams(eps=eps, T=1.2)  # small T puts random inputs inside the cutoff ramp
    fn = EnergyFunctional(g, m)
    u, v = random_pair(g, rng)
    for trunc in (False, True):
        exact = inner_h1(g, fn.gradient(u, trunc), v)
        fd = central(lambda x: fn.value(x, trunc), u, v)
        assert fd == pytest.approx(exact, rel=1e-4, abs=1e-8)
        assert fn.derivative(u, v, trunc) == pytest.approx(exact, rel=1e-9, abs=1e-12)


def test_module_level_wrappers(g, rng):
    m = ModelParams()
    u, _ = random_pair(g, rng, amp=0.3)
    fn = EnergyFunctional(g, m)
    assert J(g, u, m).total == pytest.approx(fn.value(u, truncated=False))
    assert J_trunc(g, u, m).total == pytest.approx(fn.value(u))
    assert I_eps(g, u, m) == pytest.approx(fn.I_eps(u))
    assert np.allclose(grad_J(g, u, m), fn.grad_J(u))
    assert np.allclose(grad_J_trunc(g, u, m), fn.grad_J_trunc(u))


def test_truncated_equals_untruncated_inside_ball(g, rng):
    m = ModelParams(T=3.0)
    fn = EnergyFunctional(g, m)
    u, _ = random_pair(g, rng)
    u *= 2.9 / norm_h1(g, u)
    assert fn.J_trunc(u).total == fn.J(u).total
    assert np.array_equal(fn.grad_J_trunc(u), fn.grad_J(u))
    far = u * 3.0
    bd = fn.J_trunc(far)
    assert bd.h_t == 0.0 and bd.i_eps == 0.0


def test_homogeneity_dichotomy(g):
    u = g.sample(lambda r: np.exp(-0.5 * r * r))
    fn0 = EnergyFunctional(g, ModelParams(eps=0.0))
    fn1 = EnergyFunctional(g, ModelParams(eps=1.0))
    for t in (0.5, 2.0, 3.0):
        p1, pt = fn0.phi(u).phi, fn0.phi(t * u).phi
        assert np.abs(pt - t * t * p1).max() <= 1e-8 * t * t * np.abs(p1).max()
    p1, p2 = fn1.phi(u).phi, fn1.phi(2 * u).phi
    assert np.abs(p2 - 4 * p1).max() / (4 * np.abs(p1).max()) > 1e-3


def test_fiber_derivative_of_nonlocal_term(g):
    fn = EnergyFunctional(g, ModelParams(eps=1.0))
    v = default_profile(g)
    for t in (0.3, 1.0, 2.5):
        exact = t * float(np.dot(g.vol_weights, fn.phi(t * v).phi * v * v))
        fd = (fn.I_eps((t + 1e-5) * v) - fn.I_eps((t - 1e-5) * v)) / 2e-5
        assert fd == pytest.approx(exact, rel=1e-4)


def test_theta_decomposition_is_j_minus_derivative_over_theta(g, rng):
    # the identity holds for any u; at a critical point the derivative term vanishes
    for m in (ModelParams(), ModelParams(theta=4.5, terms=(PowerTerm(1.0, 4.5),), eps=1.0),
              ModelParams(p=7.0, K=0.5)):
        fn = EnergyFunctional(g, m)
        u, _ = random_pair(g, rng)
        lhs = fn.theta_decomposition(u)
        rhs = fn.value(u, truncated=False) - fn.derivative(u, u, truncated=False) / m.theta
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_default_profile_unit_norm(g):
    assert norm_h1(g, default_profile(g)) == pytest.approx(1.0, rel=1e-14)


def test_find_t_max_matches_dense_scan(g):
    m = ModelParams()
    fn = EnergyFunctional(g, m)
    v = default_profile(g)
    t_star, value = find_t_max(g, v, m, functional=fn)
    ts = np.linspace(0.5 * t_star, 1.5 * t_star, 401)
    vals = [fn.value(t * v) for t in ts]
    assert value >= max(vals) - 1e-9
    assert abs(t_star - ts[int(np.argmax(vals))]) <= 2 * (ts[1] - ts[0])
    assert fn.derivative(t_star * v, v) == pytest.approx(0.0, abs=1e-5)


def test_find_t_max_errors(g):
    with pytest.raises(ValueError):
        find_t_max(g, np.zeros(g.size), ModelParams())
    with pytest.raises(BracketError):
        find_t_max(g, default_profile(g), ModelParams(), t_range=(1e-4, 1e-3), samples=10)


@pytest.mark.parametrize("lam,eps", [(1.0, 0.0), (30.0, 0.5), (1000.0, 2.0)])
def test_endpoint_negative_for_any_lambda_and_eps(g, lam, eps):
    m = ModelParams(lam=lam, eps=eps)
    e = find_e_T(g, m)
    fn = EnergyFunctional(g, m)
    assert norm_h1(g, e) >= np.sqrt(2) * m.T
    assert fn.value(e) < 0


def test_sobolev_constant_and_thresholds():
    S = sobolev_constant()
    assert abs(S - SOBOLEV_EXACT) / SOBOLEV_EXACT <= 1e-2
    # the discrete Rayleigh quotient never beats the sharp constant by much
    assert S <= SOBOLEV_EXACT * 1.001
    m = ModelParams(theta=5.0, T=3.0)
    thr = thresholds(m)
    assert thr.sobolev_bound == pytest.approx(S**1.5 / 30.0)
    assert thr.truncation_bound == pytest.approx(3.0 / 10.0 * 9.0)
    assert thr.admits(0.1) and not thr.admits(1.0)
    with pytest.raises(ConfigError):
        thresholds(ModelParams(theta=6.5))


def test_cache_shares_solves(g):
    cache = PhiCache(maxsize=2)
    fn = EnergyFunctional(g, ModelParams(), cache=cache)
    u = default_profile(g)
    fn.value(u)
    fn.gradient(u)
    assert cache.hits >= 1
    fn.value(2 * u)
    fn.value(3 * u)
    assert len(cache._store) == 2
