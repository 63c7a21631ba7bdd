import numpy as np
import pytest

from dnada.diffusion import build_schedule, forward_step, posterior_variance
from dnada.nncore import numeric_grad, relative_error, softmax_xent
from dnada.noisepred import (TemporalEmbedding, denoise_trajectory, init_predictor, predict,
                             predict_backward, predict_forward, temporal_embed)


def test_temporal_embedding_properties():
    emb = TemporalEmbedding(16, 50)
    a = temporal_embed(7, emb)
    np.testing.assert_array_equal(a, temporal_embed(7, emb))
    full = temporal_embed(np.arange(1, 51), emb)
    assert full.shape == (50, 16)
    assert np.all(np.abs(full) <= 1.0)
    for dim in (8, 16):
        e = TemporalEmbedding(dim, 50)
        assert np.linalg.norm(temporal_embed(1, e) - temporal_embed(50, e)) > 0.1


def test_temporal_embedding_errors():
    with pytest.raises(ValueError):
        TemporalEmbedding(7, 10)
    with pytest.raises(ValueError):
        temporal_embed(0, TemporalEmbedding(8, 10))
    with pytest.raises(ValueError):
        temporal_embed(11, TemporalEmbedding(8, 10))


def test_predict_is_grl_transparent():
    net = init_predictor(4, 3, 2, T=10, seed=0)
    x = np.random.default_rng(0).standard_normal((5, 4))
    o0, o1 = predict(x, 3, net, 0.0), predict(x, 3, net, 1.0)
    for f in ("eps_hat", "logits_cas", "logits_adv_a", "logits_adv_u"):
        np.testing.assert_array_equal(getattr(o0, f), getattr(o1, f))


def test_zero_trunk_gives_constant_eps_hat():
    net = init_predictor(3, 2, 2, T=10, seed=1)
    for layer in net.trunk_in.layers:
        layer.W[:] = 0.0
    rng = np.random.default_rng(1)
    outs = [predict(rng.standard_normal(3) * 5, 4, net).eps_hat for _ in range(3)]
    np.testing.assert_allclose(outs[0], outs[1], atol=1e-15)
    np.testing.assert_allclose(outs[0], outs[2], atol=1e-15)


def _setup(seed=2):
    net = init_predictor(3, 3, 2, T=8, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((5, 3))
    t = rng.integers(1, 9, 5)
    y_a, y_u = rng.integers(0, 2, 5), rng.integers(0, 2, 5)
    return net, x, t, y_a, y_u


def test_adversarial_gradient_is_negated_through_grl():
    net, x, t, y_a, y_u = _setup()
    outs, tape = predict_forward(x, t, net)
    _, da = softmax_xent(outs.logits_adv_a, y_a)
    _, du = softmax_xent(outs.logits_adv_u, y_u)
    zeros_eps, zeros_cas = np.zeros_like(outs.eps_hat), np.zeros_like(outs.logits_cas)
    g_rev, _ = predict_backward(net, tape, zeros_eps, zeros_cas, da, du, lambda_grl=1.0)

    def adv_loss():
        o = predict_forward(x, t, net)[0]
        return softmax_xent(o.logits_adv_a, y_a)[0] + softmax_xent(o.logits_adv_u, y_u)[0]

    trunk = net.trunk_in.params() + net.trunk_out.params() + net.temb_proj.params()
    numeric = numeric_grad(adv_loss, trunk)
    # the trunk sees the negated derivative, the heads the plain one
    assert max(relative_error(a, -n) for a, n in zip(g_rev[:8], numeric)) < 1e-4
    heads = net.head_adv_a.params() + net.head_adv_u.params()
    numeric_h = numeric_grad(adv_loss, heads)
    assert max(relative_error(a, n) for a, n in zip(g_rev[-8:], numeric_h)) < 1e-4


def test_predict_backward_full_surrogate():
    net, x, t, y_a, y_u = _setup(3)
    rng = np.random.default_rng(9)
    w = rng.standard_normal((5, 3))
    y_c = rng.integers(0, 3, 5)
    lam = 0.6
    outs, tape = predict_forward(x, t, net)
    _, dc = softmax_xent(outs.logits_cas, y_c)
    _, da = softmax_xent(outs.logits_adv_a, y_a)
    _, du = softmax_xent(outs.logits_adv_u, y_u)
    grads, dx = predict_backward(net, tape, w, dc, da, du, lambda_grl=lam)

    def trunk_view(xx=None):
        o = predict_forward(x if xx is None else xx, t, net)[0]
        return (np.sum(w * o.eps_hat) + softmax_xent(o.logits_cas, y_c)[0]
                - lam * (softmax_xent(o.logits_adv_a, y_a)[0] + softmax_xent(o.logits_adv_u, y_u)[0]))

    numeric = numeric_grad(trunk_view, net.params()[:12])
    assert max(relative_error(a, n) for a, n in zip(grads[:12], numeric)) < 1e-4
    xx = x.copy()
    num_dx = numeric_grad(lambda: trunk_view(xx), [xx])[0]
    assert relative_error(dx, num_dx) < 1e-4


def test_single_step_denoise_recovers_x0():
    sched = build_schedule(1, 0.1, 0.1)
    net = init_predictor(2, 2, 2, T=1, seed=0)
    x0, eps = np.array([0.4, -1.2]), np.array([1.0, 0.5])
    x1 = forward_step(x0, 1, eps, sched)
    # make the predictor emit exactly beta * eps
    net.head_eps.layers[0].W[:] = 0.0
    net.head_eps.layers[0].b[:] = sched.beta[0] * eps
    rec = denoise_trajectory(x1, net, sched, np.random.default_rng(0))
    np.testing.assert_allclose(rec, x0, atol=1e-15)


def test_zero_predictor_trajectory_is_finite_and_reproducible():
    sched = build_schedule(20)
    net = init_predictor(3, 2, 2, T=20, seed=0)
    net.head_eps.layers[0].W[:] = 0.0
    xT = np.ones(3)
    a = denoise_trajectory(xT, net, sched, np.random.default_rng(4))
    b = denoise_trajectory(xT, net, sched, np.random.default_rng(4))
    assert np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, b)
    expected = xT.copy()
    rng = np.random.default_rng(4)
    for step in range(20, 0, -1):
        expected = expected / sched.alpha[step - 1] + posterior_variance(step, sched) * rng.standard_normal(3)
    np.testing.assert_allclose(a, expected, rtol=1e-12)
