from __future__ import annotations

import numpy as np
import pytest

from klgreed.errors import NanGradientError
from klgreed.optim import make_optimizer, step


def test_sgd_example():
    p, _ = step(make_optimizer("sgd"), np.zeros(2), np.array([1.0, -2.0]), 0.1)
    assert np.allclose(p, [-0.1, 0.2])


def test_rmsprop_first_step():
    g = np.array([0.5, -3.0, 1e-3])
    p, st = step(make_optimizer("rmsprop"), np.ones(3), g, 0.01)
    assert np.allclose(p, 1.0 - 0.01 * g / np.sqrt(0.01 * g * g + 1e-8), rtol=1e-14)
    assert np.all(st.v >= 0) and st.t == 1


def test_adam_first_step():
    g = np.array([2.0, -0.5])
    p, _ = step(make_optimizer("adam"), np.zeros(2), g, 0.01)
    # bias correction makes the first step lr * sign(g) up to eps
    assert np.allclose(p, -0.01 * g / (np.abs(g) + 1e-8))


@pytest.mark.parametrize("kind", ["sgd", "rmsprop", "adam"])
def test_zero_gradient_keeps_params(kind):
    x = np.array([0.3, -1.2])
    p, _ = step(make_optimizer(kind), x, np.zeros(2), 0.5)
    assert np.array_equal(p, x)


@pytest.mark.parametrize("kind", ["sgd", "rmsprop", "adam"])
def test_nan_gradient_rejected(kind):
    with pytest.raises(NanGradientError):
        step(make_optimizer(kind), np.zeros(2), np.array([np.nan, 0.0]), 0.1)
    with pytest.raises(NanGradientError):
        step(make_optimizer(kind), np.zeros(2), np.array([np.inf, 0.0]), 0.1)


def test_shape_mismatch_and_unknown_kind():
    with pytest.raises(ValueError):
        step(make_optimizer(), np.zeros(2), np.zeros(3), 0.1)
    with pytest.raises(ValueError):
        make_optimizer("lbfgs")


@pytest.mark.parametrize("kind", ["sgd", "rmsprop", "adam"])
def test_bitwise_determinism(kind):
    rng = np.random.default_rng(0)
    x, st1 = rng.normal(size=4), make_optimizer(kind)
    st2 = make_optimizer(kind)
    y = x.copy()
    for _ in range(50):
        g = rng.normal(size=4)
        x, st1 = step(st1, x, g, 0.01)
        y, st2 = step(st2, y, g, 0.01)
        assert np.array_equal(x, y)


@pytest.mark.parametrize("kind", ["sgd", "rmsprop", "adam"])
def test_monotone_on_quadratic(kind):
    x, st = np.array([1.0, -2.0, 0.5]), make_optimizer(kind)
    f = []
    for _ in range(60):
        f.append(0.5 * x @ x)
        x, st = step(st, x, x, 0.01)
    f.append(0.5 * x @ x)
    assert np.all(np.diff(f[10:]) < 0)


def test_inputs_not_mutated():
    x, g = np.array([1.0, 2.0]), np.array([0.1, 0.1])
    st = make_optimizer("adam")
    step(st, x, g, 0.1)
    assert np.array_equal(x, [1.0, 2.0]) and st.m is None
