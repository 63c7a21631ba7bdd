import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dnada.nncore import (AdamState, DenseNet, GradientSet, Layer, adam_step, backward,
                          forward, grad_check, grl, init_net, numeric_grad, relative_error,
                          softmax_xent)


def identity_net(n, act="linear"):
    return DenseNet([Layer(np.eye(n), np.zeros(n), act)])


def test_forward_identity_layer():
    x = np.array([0.3, -1.2, 4.0])
    out, _ = forward(identity_net(3), x)
    np.testing.assert_array_equal(out, x)


def test_forward_relu_and_softmax():
    out, _ = forward(identity_net(2, "relu"), np.array([-1.0, 2.0]))
    np.testing.assert_array_equal(out, [0.0, 2.0])
    out, _ = forward(identity_net(2, "softmax"), np.zeros(2))
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        forward(identity_net(3), np.zeros(4))


def test_softmax_must_be_terminal():
    with pytest.raises(ValueError):
        DenseNet([Layer(np.eye(2), np.zeros(2), "softmax"), Layer(np.eye(2), np.zeros(2))])


def test_layer_dims_must_compose():
    with pytest.raises(ValueError):
        DenseNet([Layer(np.ones((3, 2)), np.zeros(3)), Layer(np.ones((2, 4)), np.zeros(2))])


def test_backward_linear_is_transpose(rng):
    W = rng.standard_normal((3, 5))
    net = DenseNet([Layer(W, np.zeros(3))])
    _, tape = forward(net, rng.standard_normal(5))
    g = rng.standard_normal(3)
    _, dx = backward(net, tape, g)
    np.testing.assert_allclose(dx, W.T @ g, rtol=1e-14)


def test_backward_zero_upstream(rng):
    net = init_net([4, 6, 3], ["relu", "linear"], 0)
    _, tape = forward(net, rng.standard_normal(4))
    grads, dx = backward(net, tape, np.zeros(3))
    assert all(not g.any() for g in grads.flat())
    assert not dx.any()


def test_backward_rejects_foreign_tape(rng):
    a = init_net([2, 2], ["linear"], 0)
    b = init_net([2, 2], ["linear"], 1)
    _, tape = forward(a, np.ones(2))
    with pytest.raises(ValueError):
        backward(b, tape, np.ones(2))


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = init_net([5, 7, 6, 3], ["relu", "linear", "softmax"], seed)
    target = rng.standard_normal(3)
    err = grad_check(net, lambda y: (0.5 * np.sum((y - target) ** 2), y - target),
                     rng.standard_normal(5))
    assert err < 1e-4


def test_grad_check_linear_regression(rng):
    net = init_net([4, 1], ["linear"], 2)
    y = 0.7
    err = grad_check(net, lambda o: (0.5 * float((o[0] - y) ** 2), o - y), rng.standard_normal(4))
    assert err < 1e-8


def test_grad_check_relu_xent_head(rng):
    net = init_net([6, 8, 8, 4], ["relu", "relu", "linear"], 7)
    err = grad_check(net, lambda o: softmax_xent(o, 2), rng.standard_normal(6))
    assert err < 1e-4


def test_grad_check_through_grl(rng):
    # trunk -> GRL -> head: trunk gradients must equal finite differences of -lambda * loss
    trunk = init_net([5, 6], ["relu"], 1)
    head = init_net([6, 6, 3], ["relu", "linear"], 2)
    x = rng.standard_normal((4, 5))
    labels = np.array([0, 2, 1, 1])
    lam = 0.8

    def loss():
        return softmax_xent(forward(head, forward(trunk, x)[0])[0], labels)[0]

    h, t_trunk = forward(trunk, x)
    logits, t_head = forward(head, h)
    _, g = softmax_xent(logits, labels)
    g_head, dh = backward(head, t_head, g)
    g_trunk, _ = backward(trunk, t_trunk, grl(dh, lam))
    num_trunk = numeric_grad(lambda: -lam * loss(), trunk.params())
    num_head = numeric_grad(loss, head.params())
    assert max(relative_error(a, n) for a, n in zip(g_trunk.flat(), num_trunk)) < 1e-4
    assert max(relative_error(a, n) for a, n in zip(g_head.flat(), num_head)) < 1e-4


@pytest.mark.parametrize("lam,up,expected", [
    (1.0, [0.3, -0.7], [-0.3, 0.7]),
    (0.0, [0.3, -0.7], [0.0, 0.0]),
    (2.5, [1.0], [-2.5]),
])
def test_grl_backward(lam, up, expected):
    np.testing.assert_array_equal(grl(np.array(up), lam), expected)


def test_softmax_xent_values():
    loss, _ = softmax_xent(np.zeros(2), 0)
    assert loss == pytest.approx(np.log(2), abs=1e-12)
    # log1p(exp(-20)) evaluated with mpmath at 50 digits
    loss, _ = softmax_xent(np.array([10.0, -10.0]), 0)
    assert loss == pytest.approx(2.0611536203143807e-09, rel=1e-12)


def test_softmax_xent_label_range():
    with pytest.raises(ValueError):
        softmax_xent(np.zeros(3), 3)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-50, 50)), st.data())
def test_softmax_xent_gradient_sums_to_zero(logits, data):
    label = data.draw(st.integers(0, len(logits) - 1))
    _, g = softmax_xent(logits, label)
    assert abs(g.sum()) < 1e-12


def test_adam_first_step_moves_by_lr_sign():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([0.3, -4.0, 1e-3])]
    before = p[0].copy()
    adam_step(p, g, None, 1e-3)
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    expected = before - 1e-3 * g[0] / (np.abs(g[0]) + 1e-8)
    np.testing.assert_allclose(p[0], expected, rtol=1e-12)
    np.testing.assert_allclose(p[0] - before, -1e-3 * np.sign(g[0]), rtol=1e-4)


def test_adam_zero_gradient_is_fixed_point():
    net = init_net([3, 2], ["linear"], 0)
    before = [q.copy() for q in net.params()]
    state = AdamState.for_params(net.params())
    for _ in range(3):
        adam_step(net, GradientSet.zeros_like(net), state, 1e-3)
    for a, b in zip(before, net.params()):
        np.testing.assert_array_equal(a, b)
    assert state.t_opt == 3


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([np.zeros(3)], [np.zeros(2)], None, 1e-3)


def test_adam_is_deterministic():
    def run():
        net = init_net([4, 5, 2], ["relu", "linear"], 9)
        rng = np.random.default_rng(0)
        state = None
        for _ in range(20):
            x = rng.standard_normal((8, 4))
            out, tape = forward(net, x)
            _, g = softmax_xent(out, rng.integers(0, 2, 8))
            grads, _ = backward(net, tape, g)
            _, state = adam_step(net, grads, state, 1e-2)
        return net.params()
    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_init_scales():
    net = init_net([100, 50, 10], ["relu", "linear"], 0)
    assert np.abs(net.layers[0].W).max() <= np.sqrt(6 / 100)
    assert np.abs(net.layers[1].W).max() <= np.sqrt(6 / 60)
    assert not net.layers[0].b.any()
