import math

import numpy as np
import pytest

from edcnn.grad import (
    backprop,
    batch_loss_and_grad,
    finite_diff_gradient,
    gradient_check,
    loss_cross_entropy,
    loss_cross_entropy_grad,
    loss_squared,
    loss_squared_grad,
    relative_error,
)
from edcnn.network import EDCNNParams, init_params


def central(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_squared_loss_values():
    assert loss_squared(3, 3) == 0
    assert loss_squared(2, 0) == 4
    assert loss_squared_grad(2, 0) == 4
    fd = central(lambda p: loss_squared(p, 0.0), 2.0, 1e-6)
    assert abs(fd - 4.0) / 4.0 <= 1e-6


def test_squared_grad_is_exact(rng):
    for pred, y in rng.normal(size=(20, 2)):
        assert loss_squared_grad(pred, y) == 2 * (pred - y)


def test_cross_entropy_values():
    assert loss_cross_entropy([0.0, 0.0], 0) == pytest.approx(math.log(2), abs=1e-12)
    assert loss_cross_entropy([1000.0, 0.0], 0) == pytest.approx(0.0, abs=1e-12)
    assert math.isfinite(loss_cross_entropy([0.0, 1000.0], 0))
    with pytest.raises(ValueError):
        loss_cross_entropy([0.0, 0.0], 2)
    with pytest.raises(ValueError):
        loss_cross_entropy([0.0, 0.0], -1)


def test_cross_entropy_gradient_fd(rng):
    z = rng.normal(size=5)
    g = loss_cross_entropy_grad(z, 3)
    fd = np.array([central(lambda t: loss_cross_entropy(np.where(np.arange(5) == i, t, z), 3), z[i], 1e-5)
                   for i in range(5)])
    assert np.max(relative_error(g, fd)) <= 1e-5
    assert abs(g.sum()) <= 1e-12


def test_zero_params_out_weight_grad_is_zero():
    p = init_params(4, 2, 2, scheme="constant", value=0.0)
    _, g = backprop(p, np.array([1.0, -2.0, 3.0, 0.5]), 1.7, "squared")
    assert not np.any(g.out_weights)


def test_hand_chain_rule():
    p = EDCNNParams(d=1, s=1, filters=[[1.0, 1.0]], biases=[[0.0, 0.0]], out_weights=[1.0, 1.0])
    loss, g = backprop(p, np.array([2.0]), 0.0, "squared")
    assert loss == 16.0
    np.testing.assert_array_equal(g.out_weights, [[16.0, 16.0]])
    # d/db = 2*4*c = (8, 8); d/dw_j = sum_i dz_i * x_{i-j} = 8*2 for both taps
    np.testing.assert_array_equal(g.biases[0], [8.0, 8.0])
    np.testing.assert_array_equal(g.filters[0], [16.0, 16.0])


def test_random_network_matches_finite_differences(rng):
    p = init_params(8, 2, 3, seed=17)
    x = rng.normal(size=8)
    _, g = backprop(p, x, 0.3, "squared")
    fd, kink = finite_diff_gradient(p, x, 0.3, "squared", 1e-5, return_kink_mask=True)
    err = relative_error(g.flat(), fd.flat())[~kink]
    assert err.max() <= 1e-4


def test_linear_regime_exact(rng):
    # all inputs, filters and biases positive: every ReLU is the identity
    d, s, L = 5, 2, 3
    p = init_params(d, s, L, seed=0)
    p = p.with_flat(np.abs(p.flat()) * 0.5 + 0.05)
    x = rng.uniform(0.1, 1.0, d)
    _, g = backprop(p, x, 1.0, "squared")
    fd = finite_diff_gradient(p, x, 1.0, "squared", 1e-5)
    assert np.max(relative_error(g.flat(), fd.flat())) <= 1e-8


def test_zero_step_rejected():
    p = init_params(4, 2, 1)
    with pytest.raises(ValueError):
        finite_diff_gradient(p, np.zeros(4), 0.0, "squared", 0.0)


def test_relative_error_definition():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 3.0) == pytest.approx(0.5)
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_check_property(seed):
    r = np.random.default_rng(seed)
    s = int(r.integers(2, 4))
    d = int(r.integers(s, 11))
    L = int(r.integers(1, 5))
    x = r.uniform(-1, 1, d)
    err, _ = gradient_check(init_params(d, s, L, seed=seed), x, float(r.normal()), "squared")
    assert err <= 1e-4
    err, _ = gradient_check(init_params(d, s, L, 4, seed=seed), x, int(r.integers(4)), "cross_entropy")
    assert err <= 1e-4


def test_batch_gradient_is_sum_of_samples(rng):
    p = init_params(6, 3, 2, out_rows=3, seed=1)
    X = rng.normal(size=(5, 6))
    y = rng.integers(0, 3, 5)
    total, g = batch_loss_and_grad(p, X, y, "cross_entropy", reduction="sum")
    acc = np.zeros(p.n_scalars())
    loss_acc = 0.0
    for i in range(5):
        li, gi = backprop(p, X[i], int(y[i]), "cross_entropy")
        acc += gi.flat()
        loss_acc += li
    assert total == pytest.approx(loss_acc, rel=1e-12)
    np.testing.assert_allclose(g.flat(), acc, rtol=1e-10, atol=1e-14)


def test_shape_errors():
    p = init_params(4, 2, 2)
    with pytest.raises(ValueError):
        backprop(p, np.zeros(3), 0.0, "squared")
    with pytest.raises(ValueError):
        backprop(p, np.zeros(4), 0, "cross_entropy")  # single-row head
    with pytest.raises(ValueError):
        backprop(p, np.zeros(4), 0.0, "hinge")
