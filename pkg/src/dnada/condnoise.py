"""Class-conditioned noise generator and the forward-process classifier heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nncore import DenseNet, backward, forward, init_net

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 2.0


@dataclass
class LabelEmbedding:
    activity_table: np.ndarray
    user_table: np.ndarray
    gamma_a: float = 1.0
    gamma_u: float = 1.0

    def __post_init__(self):
        if self.activity_table.shape[1] != self.user_table.shape[1]:
            raise ValueError("embedding tables must share the feature dimension")
        if self.gamma_a < 0 or self.gamma_u < 0:
            raise ValueError("gamma coefficients must be non-negative")

    @property
    def dim(self) -> int:
        return self.activity_table.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.activity_table, self.user_table]


def init_embedding(n_activity: int, dim: int, seed: int,
                   gamma_a: float = 1.0, gamma_u: float = 1.0) -> LabelEmbedding:
    """Unit-norm rows, mutually orthogonal whenever they fit in ``dim``."""
    rng = np.random.default_rng(seed)
    n = n_activity + 2
    if n <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, n)))
        rows = q.T
    else:
        rows = rng.standard_normal((n, dim))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        k = min(n_activity, dim)
        q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
        rows[:k] = q.T
    return LabelEmbedding(rows[:n_activity].copy(), rows[n_activity:].copy(), gamma_a, gamma_u)


@dataclass
class CondGaussian:
    mean: np.ndarray
    log_var: np.ndarray


@dataclass
class NoiseGenerator:
    trunk: DenseNet
    mean_head: DenseNet
    logvar_head: DenseNet
    emb: LabelEmbedding
    fixed_unit_var: bool = True

    def nets(self) -> list[DenseNet]:
        return [self.trunk, self.mean_head, self.logvar_head]

    def params(self) -> list[np.ndarray]:
        out = []
        for n in self.nets():
            out += n.params()
        return out + self.emb.params()


def init_generator(dim: int, n_activity: int, seed: int, gamma_a: float = 1.0,
                   gamma_u: float = 1.0, fixed_unit_var: bool = True) -> NoiseGenerator:
    ss = np.random.SeedSequence(seed).spawn(4)
    seeds = [int(s.generate_state(1)[0]) for s in ss]
    w = 2 * dim
    trunk = init_net([dim, w, w, w], ["linear", "relu", "linear"], seeds[0])
    mean_head = init_net([w, dim], ["linear"], seeds[1])
    # residual mean starts at zero so the initial noise mean is the label shift
    mean_head.layers[0].W[:] = 0.0
    logvar_head = init_net([w, dim], ["linear"], seeds[2])
    logvar_head.layers[0].W[:] = 0.0
    emb = init_embedding(n_activity, dim, seeds[3], gamma_a, gamma_u)
    return NoiseGenerator(trunk, mean_head, logvar_head, emb, fixed_unit_var)


def label_shift(c_a, c_u, emb: LabelEmbedding) -> np.ndarray:
    c_a = np.asarray(c_a)
    c_u = np.asarray(c_u)
    if np.any(c_a < 0) or np.any(c_a >= len(emb.activity_table)):
        raise IndexError(f"activity index out of range 0..{len(emb.activity_table) - 1}")
    if np.any(c_u < 0) or np.any(c_u >= len(emb.user_table)):
        raise IndexError("user index must be 0 (source) or 1 (target)")
    return emb.gamma_a * emb.activity_table[c_a] + emb.gamma_u * emb.user_table[c_u]


@dataclass
class GenTape:
    trunk: object
    mean: object
    logvar: object
    raw_log_var: np.ndarray
    c_a: np.ndarray
    c_u: np.ndarray
    squeeze: bool


def gen_forward(gen: NoiseGenerator, x0, c_a, c_u) -> tuple[CondGaussian, GenTape]:
    x0 = np.asarray(x0, dtype=np.float64)
    squeeze = x0.ndim == 1
    X = x0[None, :] if squeeze else x0
    if X.shape[-1] != gen.emb.dim:
        raise ValueError(f"feature dimension {X.shape[-1]} != generator dimension {gen.emb.dim}")
    ca, cu = np.atleast_1d(c_a), np.atleast_1d(c_u)
    h, t_trunk = forward(gen.trunk, X)
    resid, t_mean = forward(gen.mean_head, h)
    raw, t_lv = forward(gen.logvar_head, h)
    mean = label_shift(ca, cu, gen.emb) + resid
    if gen.fixed_unit_var:
        log_var = np.zeros_like(mean)
    else:
        log_var = np.clip(raw, LOG_VAR_MIN, LOG_VAR_MAX)
    g = CondGaussian(mean[0], log_var[0]) if squeeze else CondGaussian(mean, log_var)
    return g, GenTape(t_trunk, t_mean, t_lv, raw, ca, cu, squeeze)


def gen_params(x0, c_a, c_u, gen: NoiseGenerator) -> CondGaussian:
    return gen_forward(gen, x0, c_a, c_u)[0]


def gen_backward(gen: NoiseGenerator, tape: GenTape, d_mean: np.ndarray,
                 d_log_var: np.ndarray | None) -> list[np.ndarray]:
    """Gradients for ``gen.params()`` given upstream gradients on mean and log-variance."""
    d_mean = np.atleast_2d(d_mean)
    g_mean, dh = backward(gen.mean_head, tape.mean, d_mean)
    if gen.fixed_unit_var or d_log_var is None:
        d_raw = np.zeros_like(tape.raw_log_var)
    else:
        inside = (tape.raw_log_var > LOG_VAR_MIN) & (tape.raw_log_var < LOG_VAR_MAX)
        d_raw = np.atleast_2d(d_log_var) * inside
    g_lv, dh2 = backward(gen.logvar_head, tape.logvar, d_raw)
    g_trunk, _ = backward(gen.trunk, tape.trunk, dh + dh2)
    emb = gen.emb
    d_act = np.zeros_like(emb.activity_table)
    d_user = np.zeros_like(emb.user_table)
    np.add.at(d_act, tape.c_a, emb.gamma_a * d_mean)
    np.add.at(d_user, tape.c_u, emb.gamma_u * d_mean)
    return g_trunk.flat() + g_mean.flat() + g_lv.flat() + [d_act, d_user]


def sample_noise(g: CondGaussian, rng: np.random.Generator, z: np.ndarray | None = None) -> np.ndarray:
    """Reparameterized draw ``mean + exp(log_var / 2) * z``."""
    if z is None:
        z = rng.standard_normal(np.shape(g.mean))
    return g.mean + np.exp(0.5 * g.log_var) * z


@dataclass
class ForwardHeads:
    act_head: DenseNet
    dom_head: DenseNet

    def params(self) -> list[np.ndarray]:
        return self.act_head.params() + self.dom_head.params()


def init_forward_heads(dim: int, n_activity: int, seed: int) -> ForwardHeads:
    s1, s2 = np.random.SeedSequence(seed).generate_state(2)
    return ForwardHeads(
        init_net([dim, 2 * dim, n_activity], ["relu", "linear"], int(s1)),
        init_net([dim, 2 * dim, 2], ["relu", "linear"], int(s2)),
    )


def forward_heads(eps, act_head: DenseNet, dom_head: DenseNet) -> tuple[np.ndarray, np.ndarray]:
    return forward(act_head, eps)[0], forward(dom_head, eps)[0]
