"""Noise predictor: timestep-aware trunk, noise head, source classifier and
gradient-reversed discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, reverse_step
from .nncore import DenseNet, backward, forward, grl, init_net


@dataclass(frozen=True)
class TemporalEmbedding:
    dim: int = 16
    max_t: int = 50

    def __post_init__(self):
        if self.dim % 2:
            raise ValueError("temporal embedding dimension must be even")


def temporal_embed(t, emb: TemporalEmbedding) -> np.ndarray:
    """Sinusoidal code, ``[sin(t / 10000^(2i/dim)), cos(...)]`` per frequency ``i``."""
    t_arr = np.atleast_1d(np.asarray(t))
    if np.any(t_arr < 1) or np.any(t_arr > emb.max_t):
        raise ValueError(f"timestep outside 1..{emb.max_t}")
    half = emb.dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / emb.dim)
    ang = t_arr[:, None].astype(np.float64) * freqs[None, :]
    out = np.empty((len(t_arr), emb.dim))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out[0] if np.ndim(t) == 0 else out


@dataclass
class PredictorOutputs:
    eps_hat: np.ndarray
    logits_cas: np.ndarray
    logits_adv_a: np.ndarray
    logits_adv_u: np.ndarray
    penultimate: np.ndarray


@dataclass
class PredictorNet:
    # the trunk is split where the temporal projection is re-injected
    trunk_in: DenseNet
    trunk_out: DenseNet
    temb_proj: DenseNet
    head_eps: DenseNet
    head_cas: DenseNet
    head_adv_a: DenseNet
    head_adv_u: DenseNet
    temb: TemporalEmbedding

    def nets(self) -> list[DenseNet]:
        return [self.trunk_in, self.trunk_out, self.temb_proj, self.head_eps,
                self.head_cas, self.head_adv_a, self.head_adv_u]

    def params(self) -> list[np.ndarray]:
        out = []
        for n in self.nets():
            out += n.params()
        return out

    @property
    def dim(self) -> int:
        return self.head_eps.out_dim


def init_predictor(dim: int, n_source: int, n_activity: int, T: int, seed: int,
                   temb_dim: int = 16) -> PredictorNet:
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(7)]
    wide, pen = 4 * dim, 2 * dim
    return PredictorNet(
        trunk_in=init_net([dim + temb_dim, wide], ["relu"], seeds[0]),
        trunk_out=init_net([wide, wide, pen], ["relu", "linear"], seeds[1]),
        temb_proj=init_net([temb_dim, wide], ["linear"], seeds[2]),
        head_eps=init_net([pen, dim], ["linear"], seeds[3]),
        head_cas=init_net([pen, n_source], ["linear"], seeds[4]),
        head_adv_a=init_net([pen, pen, n_activity], ["relu", "linear"], seeds[5]),
        head_adv_u=init_net([pen, pen, 2], ["relu", "linear"], seeds[6]),
        temb=TemporalEmbedding(temb_dim, T),
    )


@dataclass
class PredTape:
    te: np.ndarray
    trunk_in: object
    trunk_out: object
    temb_proj: object
    eps: object
    cas: object
    adv_a: object
    adv_u: object
    squeeze: bool


def predict_forward(x_t, t, net: PredictorNet) -> tuple[PredictorOutputs, PredTape]:
    x = np.asarray(x_t, dtype=np.float64)
    squeeze = x.ndim == 1
    X = x[None, :] if squeeze else x
    if X.shape[-1] != net.dim:
        raise ValueError(f"state dimension {X.shape[-1]} != predictor dimension {net.dim}")
    t_arr = np.broadcast_to(np.atleast_1d(t), (len(X),))
    te = temporal_embed(t_arr, net.temb)
    h1, tp_in = forward(net.trunk_in, np.concatenate([X, te], axis=1))
    inj, tp_proj = forward(net.temb_proj, te)
    pen, tp_out = forward(net.trunk_out, h1 + inj)
    eps_hat, tp_eps = forward(net.head_eps, pen)
    cas, tp_cas = forward(net.head_cas, pen)
    # GRL is the identity on the way forward
    adv_a, tp_a = forward(net.head_adv_a, pen)
    adv_u, tp_u = forward(net.head_adv_u, pen)
    outs = PredictorOutputs(eps_hat, cas, adv_a, adv_u, pen)
    if squeeze:
        outs = PredictorOutputs(*(v[0] for v in (eps_hat, cas, adv_a, adv_u, pen)))
    return outs, PredTape(te, tp_in, tp_out, tp_proj, tp_eps, tp_cas, tp_a, tp_u, squeeze)


def predict(x_t, t, net: PredictorNet, lambda_grl: float = 1.0) -> PredictorOutputs:
    # lambda_grl only matters on the backward pass
    return predict_forward(x_t, t, net)[0]


def _trunk_backward(net: PredictorNet, tape: PredTape, d_pen: np.ndarray):
    g_out, d_h = backward(net.trunk_out, tape.trunk_out, d_pen)
    g_proj, _ = backward(net.temb_proj, tape.temb_proj, d_h)
    g_in, d_inp = backward(net.trunk_in, tape.trunk_in, d_h)
    return g_in.flat() + g_out.flat() + g_proj.flat(), d_inp[:, :net.dim]


def predict_backward(net: PredictorNet, tape: PredTape, d_eps, d_cas, d_adv_a, d_adv_u,
                     lambda_grl: float = 1.0, scale_adv_a: float = 1.0,
                     scale_adv_u: float = 1.0, reverse_into_input: bool = True
                     ) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients for ``net.params()`` plus the gradient w.r.t. ``x_t``.

    ``d_adv_*`` train the discriminator heads as given; what crosses the GRL
    into the trunk is reversed by ``lambda_grl`` and further scaled by
    ``scale_adv_*``.  With ``reverse_into_input=False`` the reversed signal
    updates the trunk but is left out of the returned input gradient.
    """
    def mat(g):
        return np.atleast_2d(np.asarray(g, dtype=np.float64))

    g_eps, dp_eps = backward(net.head_eps, tape.eps, mat(d_eps))
    g_cas, dp_cas = backward(net.head_cas, tape.cas, mat(d_cas))
    g_a, dp_a = backward(net.head_adv_a, tape.adv_a, mat(d_adv_a))
    g_u, dp_u = backward(net.head_adv_u, tape.adv_u, mat(d_adv_u))
    d_rev = grl(scale_adv_a * dp_a + scale_adv_u * dp_u, lambda_grl)
    if reverse_into_input:
        trunk_grads, d_x = _trunk_backward(net, tape, dp_eps + dp_cas + d_rev)
    else:
        trunk_grads, d_x = _trunk_backward(net, tape, dp_eps + dp_cas)
        rev_grads, _ = _trunk_backward(net, tape, d_rev)
        trunk_grads = [a + b for a, b in zip(trunk_grads, rev_grads)]
    grads = trunk_grads + g_eps.flat() + g_cas.flat() + g_a.flat() + g_u.flat()
    return grads, (d_x[0] if tape.squeeze else d_x)


def denoise_trajectory(x_T, net: PredictorNet, sched: NoiseSchedule,
                       rng: np.random.Generator) -> np.ndarray:
    x = np.array(x_T, dtype=np.float64)
    for t in range(sched.T, 0, -1):
        eps_hat = predict(x, t, net).eps_hat
        x = reverse_step(x, t, eps_hat, rng.standard_normal(x.shape), sched)
    return x

