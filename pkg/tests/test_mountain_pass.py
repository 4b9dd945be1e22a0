import warnings

import numpy as np
import pytest

from qsplab.energy import EnergyFunctional
from qsplab.exceptions import ConfigError, NonConvergence, ThresholdViolation
from qsplab.grid import build_uniform, inner_h1, norm_h1
from qsplab.model import ModelParams
from qsplab.mountain_pass import MPAOptions, init_path, mpa_step, run

PARAMS = ModelParams(lam=60.0)


@pytest.fixture(scope="module")
def g():
    return build_uniform(15.0, 400)


@pytest.fixture(scope="module")
def point(g):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThresholdViolation)
        return run(g, PARAMS)


def test_initial_path(g):
    st = init_path(g, PARAMS, 31)
    assert len(st.nodes) == 32
    assert st.values[0] == 0.0 and not np.any(st.nodes[0])
    assert st.values[-1] < 0
    assert 0 < st.max_index < 31
    assert st.level_estimate >= 1e-10
    e = st.nodes[-1]
    for k in (5, 17):
        assert np.allclose(st.nodes[k], k / 31 * e)


def test_path_steps_never_raise_the_level(g):
    fn = EnergyFunctional(g, PARAMS)
    st = init_path(g, PARAMS, 31, functional=fn)
    ends = (st.nodes[0].copy(), st.nodes[-1].copy())
    levels = [st.level_estimate]
    grads = []
    for _ in range(40):
        st = mpa_step(st, g, PARAMS, functional=fn)
        levels.append(st.level_estimate)
        grads.append(st.normal_grad_norm)
        if st.stalled:
            break
    assert np.all(np.diff(levels) <= 1e-12)
    assert np.array_equal(st.nodes[0], ends[0]) and np.array_equal(st.nodes[-1], ends[1])
    # the gradient at the top node trends down over 10-step windows
    windows = [np.mean(grads[i:i + 10]) for i in range(0, len(grads) - 9, 10)]
    assert windows[-1] < windows[0]


def test_run_contract(g, point):
    cp = point
    assert cp.converged
    assert cp.grad_norm <= 1e-6 * max(1.0, cp.h1_norm)
    assert cp.level > 0
    assert cp.min_u >= -1e-6 * cp.max_u
    assert cp.promoted and cp.untruncated_grad_norm <= 2e-6
    assert cp.phi is not None and cp.phi.min_value >= -1e-10 * cp.phi.max_abs
    fn = EnergyFunctional(g, PARAMS)
    assert fn.theta_decomposition(cp.u) == pytest.approx(cp.level, rel=1e-6)


def test_critical_in_random_directions(g, point):
    fn = EnergyFunctional(g, PARAMS)
    rng = np.random.default_rng(7)
    for _ in range(20):
        v = rng.standard_normal(g.size) * np.exp(-0.2 * g.nodes)
        v[-1] = 0.0
        assert abs(fn.derivative(point.u, v)) <= 1e-6 * norm_h1(g, v)


def test_mountain_pass_level_is_fiber_maximum(g, point):
    # the level is the max of J along the ray through u
    fn = EnergyFunctional(g, PARAMS)
    for t in (0.9, 0.99, 1.01, 1.1):
        assert fn.value(t * point.u) < point.level


def test_warm_start_reaches_same_point(g, point):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThresholdViolation)
        cp = run(g, PARAMS, warm_start=1.05 * point.u)
    assert cp.converged
    assert norm_h1(g, cp.u - point.u) <= 1e-3 * point.h1_norm
    assert cp.level == pytest.approx(point.level, rel=1e-8)


def test_small_truncation_radius_is_doubled(g):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThresholdViolation)
        cp = run(g, PARAMS.replace(T=1.0))
    assert cp.converged and cp.T > 1.0 and cp.h1_norm <= cp.T


def test_threshold_warning():
    g = build_uniform(20.0, 600)
    with pytest.warns(ThresholdViolation):
        cp = run(g, ModelParams(lam=30.0))
    assert not cp.below_thresholds


def test_nonconvergence_is_flagged_or_raised(g):
    opts = MPAOptions(max_iter=3, path_iter=3)
    cp = run(g, PARAMS, opts)
    assert not cp.converged and cp.level_history
    with pytest.raises(NonConvergence) as info:
        run(g, PARAMS, opts, raise_on_failure=True)
    assert info.value.result is not None


def test_invalid_params_rejected(g):
    with pytest.raises(ConfigError):
        run(g, ModelParams(theta=4.0))
