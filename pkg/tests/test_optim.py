import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffattention.model import PARAM_NAMES, ModelParams, PoolingMode, backward, forward
from ffattention.numeric import NumericError, Rng
from ffattention.optim import AdamState, adam_step, init_params
from ffattention.tasks import Fixed, TaskKind, generate_batch


def reference_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook bias-corrected Adam, written out step by step."""
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g ** 2
        theta = theta - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_init_biases_zero_and_shapes():
    p = init_params(100, PoolingMode.ATTENTION, Rng(0))
    for name in ("b_xh", "b_hc", "b_cs", "b_sy"):
        assert np.all(getattr(p, name) == 0)
    assert p.W_xh.shape == (100, 2) and p.W_cs.shape == (100, 100)


def test_init_fan_in_std():
    p = init_params(100, PoolingMode.ATTENTION, Rng(0))
    assert abs(p.W_cs.std() - 0.1) < 0.003
    assert abs(p.W_xh.std() - 1 / np.sqrt(2)) < 0.08
    assert abs(p.W_cs.mean()) < 0.005


def test_init_same_weights_for_both_poolings():
    a = init_params(10, PoolingMode.ATTENTION, Rng(3))
    b = init_params(10, PoolingMode.MEAN, Rng(3))
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_zero_gradient_leaves_params():
    p = init_params(5, PoolingMode.ATTENTION, Rng(1))
    zero = {k: np.zeros_like(v) for k, v in p.tensors().items()}
    q, state = adam_step(p, zero, AdamState.fresh(p, 0.01))
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(getattr(p, name), getattr(q, name))
    assert state.t == 1


def test_first_step_closed_form():
    p = ModelParams.zeros(1)
    ones = {k: np.ones_like(v) for k, v in p.tensors().items()}
    q, _ = adam_step(p, ones, AdamState.fresh(p, 0.001))
    for name in PARAM_NAMES:
        assert np.all(np.abs(getattr(q, name) - (-0.000999999990)) < 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-3), st.floats(1e-5, 0.1))
def test_first_step_has_lr_magnitude(g, lr):
    p = ModelParams.zeros(2)
    grads = {k: np.full(v.shape, g) for k, v in p.tensors().items()}
    q, _ = adam_step(p, grads, AdamState.fresh(p, lr))
    for name in PARAM_NAMES:
        delta = getattr(q, name)
        assert np.all(np.abs(np.abs(delta) - lr) <= lr * 1e-4)
        assert np.all(np.sign(delta) == -np.sign(g))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_first_step_bounded_for_any_gradient(seed):
    r = np.random.default_rng(seed)
    p = ModelParams.zeros(3)
    grads = {k: r.standard_normal(v.shape) * 10.0 ** r.integers(-6, 6) for k, v in p.tensors().items()}
    q, _ = adam_step(p, grads, AdamState.fresh(p, 0.003))
    for name in PARAM_NAMES:
        assert np.all(np.abs(getattr(q, name)) <= 0.003 * (1 + 1e-6))


def test_matches_reference_over_many_steps():
    r = np.random.default_rng(0)
    start = init_params(3, PoolingMode.ATTENTION, Rng(0))
    p, state = start, AdamState.fresh(start, 0.01)
    history = []
    for _ in range(25):
        g = {k: r.standard_normal(v.shape) for k, v in p.tensors().items()}
        history.append(g)
        p, state = adam_step(p, g, state)
    for name in PARAM_NAMES:
        expected = reference_adam(getattr(start, name), [h[name] for h in history], 0.01)
        np.testing.assert_allclose(getattr(p, name), expected, rtol=1e-12, atol=1e-15)
    assert state.t == 25


def test_adam_is_deterministic_and_pure():
    p = init_params(4, PoolingMode.ATTENTION, Rng(2))
    r = np.random.default_rng(1)
    g = {k: r.standard_normal(v.shape) for k, v in p.tensors().items()}
    s = AdamState.fresh(p, 0.003)
    a, sa = adam_step(p, g, s)
    b, sb = adam_step(p, g, s)
    assert s.t == 0 and np.all(s.m["W_cs"] == 0)
    for name in PARAM_NAMES:
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
        assert sa.v[name].tobytes() == sb.v[name].tobytes()
        assert np.all(sa.v[name] >= 0)


def test_non_finite_gradient_named():
    p = ModelParams.zeros(2)
    g = {k: np.zeros_like(v) for k, v in p.tensors().items()}
    g["W_cs"][0, 1] = np.nan
    with pytest.raises(NumericError, match="W_cs"):
        adam_step(p, g, AdamState.fresh(p, 0.001))


def test_invalid_lr():
    with pytest.raises(ValueError):
        AdamState(lr=0.0)


def test_mean_mode_keeps_attention_params_fixed():
    p = init_params(6, PoolingMode.MEAN, Rng(5))
    W_hc, b_hc = p.W_hc.copy(), p.b_hc.copy()
    state = AdamState.fresh(p, 0.01)
    for i in range(20):
        batch = generate_batch(TaskKind.ADDITION, Fixed(10), 8, Rng(5, 1), i)
        p, state = adam_step(p, backward(p, batch, forward(p, batch)), state)
    np.testing.assert_array_equal(p.W_hc, W_hc)
    np.testing.assert_array_equal(p.b_hc, b_hc)
