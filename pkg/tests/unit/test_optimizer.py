"""Unit tests for the Adam update rule."""

import math

import numpy as np
import pytest

from mimicry_cli.autodiff import Tensor
from mimicry_cli.optimizer import NonFiniteGradientError, OptimizerState, adam_step

pytestmark = pytest.mark.unit


def params_of(**arrays):
    return {name: Tensor(np.asarray(a, dtype=np.float64), requires_grad=True, name=name) for name, a in arrays.items()}


def test_zero_gradient_leaves_parameters_unchanged():
    params = params_of(w=np.random.default_rng(0).standard_normal((3, 4)), b=np.ones(4))
    before = {name: p.data.copy() for name, p in params.items()}
    state = OptimizerState(lr=1e-2)
    for _ in range(3):
        adam_step(params, {name: np.zeros_like(p.data) for name, p in params.items()}, state)
    assert all(np.array_equal(params[name].data, before[name]) for name in params)
    assert state.t == 3


def test_first_step_moves_by_learning_rate_against_gradient_sign():
    params = params_of(a=[1.0], b=[1.0])
    state = OptimizerState(lr=3e-5)
    adam_step(params, {"a": np.array([0.3]), "b": np.array([-0.3])}, state)
    assert params["a"].data[0] - 1.0 == pytest.approx(-3e-5, rel=1e-6)
    assert params["b"].data[0] - 1.0 == pytest.approx(3e-5, rel=1e-6)


def test_five_steps_on_square_match_hand_trace():
    lr, beta1, beta2, eps = 0.1, 0.9, 0.999, 1e-8
    w, m, v = 1.0, 0.0, 0.0
    trace = []
    for t in range(1, 6):
        g = 2.0 * w
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        w = w - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(w)

    params = params_of(w=[1.0])
    state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for expected in trace:
        adam_step(params, {"w": 2.0 * params["w"].data}, state)
        assert params["w"].data[0] == pytest.approx(expected, abs=1e-12)
    assert state.t == 5


def test_missing_gradient_counts_as_zero():
    params = params_of(w=[2.0], frozen=[5.0])
    state = OptimizerState(lr=0.01)
    adam_step(params, {"w": np.array([1.0])}, state)
    assert params["frozen"].data[0] == 5.0
    assert params["w"].data[0] < 2.0
    assert np.array_equal(state.m["frozen"], [0.0])


def test_non_finite_gradient_aborts_without_update():
    params = params_of(w=np.ones((2, 2)), b=np.ones(2))
    state = OptimizerState(lr=0.1)
    grads = {"w": np.array([[np.nan, 1.0], [np.inf, 1.0]]), "b": np.ones(2)}
    with pytest.raises(NonFiniteGradientError) as exc_info:
        adam_step(params, grads, state)
    assert exc_info.value.diagnostics == {"w": 2}
    assert np.array_equal(params["w"].data, np.ones((2, 2)))
    assert np.array_equal(params["b"].data, np.ones(2))
    assert state.t == 0
    assert state.m == {}


def test_shape_mismatch_is_rejected():
    params = params_of(w=np.ones(3))
    with pytest.raises(ValueError, match="shape"):
        adam_step(params, {"w": np.ones(4)}, OptimizerState())


def test_parameter_dtype_is_preserved():
    params = {"w": Tensor(np.ones(3, dtype=np.float32), requires_grad=True, dtype=np.float32)}
    state = OptimizerState(lr=1e-3)
    adam_step(params, {"w": np.full(3, 0.5, dtype=np.float32)}, state)
    assert params["w"].dtype == np.float32
    assert state.m["w"].dtype == np.float64


def test_zero_learning_rate_freezes_parameters():
    params = params_of(w=np.random.default_rng(1).standard_normal(5))
    before = params["w"].data.copy()
    state = OptimizerState(lr=0.0)
    for _ in range(4):
        adam_step(params, {"w": np.random.default_rng(2).standard_normal(5)}, state)
    assert np.array_equal(params["w"].data, before)


def test_hyperparameters_summary():
    state = OptimizerState(lr=1e-3, t=7)
    assert state.hyperparameters() == {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "t": 7}
