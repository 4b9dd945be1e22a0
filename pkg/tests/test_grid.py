import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qsplab.exceptions import GridMismatchError
from qsplab.grid import (apply_stiffness, build_uniform, dirichlet, inner_h1, norm_h1,
                         norm_lp, radial_derivative, seminorm_grad_lp, solve_helmholtz,
                         volume_integral, x_norm)


def test_build_rejects_bad_input():
    for R, N in ((0.0, 100), (-1.0, 100), (np.inf, 100), (np.nan, 100), (10.0, 8), (10.0, 20.5)):
        with pytest.raises(ValueError):
            build_uniform(R, N)


def test_arrays_are_read_only():
    g = build_uniform(10.0, 50)
    with pytest.raises(ValueError):
        g.vol_weights[0] = 1.0
    assert g.nodes[-1] == 10.0 and g.size == 51


@pytest.mark.parametrize("R,N", [(1.0, 16), (15.0, 800), (20.0, 1201)])
def test_volume_weights_sum_to_ball(R, N):
    g = build_uniform(R, N)
    ball = 4.0 / 3.0 * np.pi * R**3
    assert abs(g.vol_weights.sum() - ball) <= 1e-12 * ball


def test_gaussian_integrals_match_closed_forms():
    g = build_uniform(12.0, 2000)
    r = g.nodes
    # int exp(-r^2) dx = pi^(3/2) over R^3
    assert volume_integral(g, np.exp(-r * r)) == pytest.approx(np.pi**1.5, rel=1e-5)
    u = np.exp(-0.5 * r * r)
    # |grad u|^2 = r^2 exp(-r^2) integrates to 3/2 pi^(3/2)
    assert seminorm_grad_lp(g, u, 2) ** 2 == pytest.approx(1.5 * np.pi**1.5, rel=1e-5)
    assert norm_h1(g, u) ** 2 == pytest.approx(2.5 * np.pi**1.5, rel=1e-5)


def test_norms_and_mismatch():
    g = build_uniform(5.0, 100)
    h = g.sample(lambda r: 1.0 - r / 5.0)
    assert norm_lp(g, h, np.inf) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        norm_lp(g, h, 0.5)
    with pytest.raises(GridMismatchError):
        inner_h1(g, h, h[:-1])
    assert dirichlet(g, np.ones(g.size))[-1] == 0.0
    # the radial derivative of a linear profile is constant
    assert np.allclose(radial_derivative(g, h), -0.2)
    assert x_norm(g, h) == pytest.approx(seminorm_grad_lp(g, h, 2) + seminorm_grad_lp(g, h, 4))


def test_stiffness_is_gradient_of_dirichlet_energy(rng):
    g = build_uniform(4.0, 60)
    h = rng.standard_normal(g.size)
    v = rng.standard_normal(g.size)
    energy = lambda x: 0.5 * seminorm_grad_lp(g, x, 2) ** 2
    fd = (energy(h + 1e-6 * v) - energy(h - 1e-6 * v)) / 2e-6
    assert np.dot(apply_stiffness(g, h), v) == pytest.approx(fd, rel=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_helmholtz_weak_identity(seed):
    rng = np.random.default_rng(seed)
    g = build_uniform(6.0, 80)
    s = rng.standard_normal(g.size)
    v = rng.standard_normal(g.size)
    v[-1] = 0.0
    w = solve_helmholtz(g, s)
    assert w[-1] == 0.0
    lhs = inner_h1(g, w, v)
    rhs = float(np.dot(g.vol_weights, s * v))
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_inner_product_is_symmetric_bilinear(seed, a, b):
    rng = np.random.default_rng(seed)
    g = build_uniform(3.0, 40)
    x, y, z = rng.standard_normal((3, g.size))
    assert inner_h1(g, x, y) == pytest.approx(inner_h1(g, y, x), rel=1e-12)
    lhs = inner_h1(g, a * x + b * y, z)
    rhs = a * inner_h1(g, x, z) + b * inner_h1(g, y, z)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_helmholtz_manufactured_second_order():
    # w = exp(-r^2) solves -Lap w + w = (7 - 4 r^2) exp(-r^2)
    errs = []
    for N in (500, 1000, 2000):
        g = build_uniform(8.0, N)
        r = g.nodes
        w = solve_helmholtz(g, (7.0 - 4.0 * r * r) * np.exp(-r * r))
        errs.append(np.abs(w - np.exp(-r * r)).max())
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))
