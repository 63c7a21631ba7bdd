"""Small dense-network engine with hand-written backprop.

Everything runs in float64 on batches shaped ``(batch, features)``; a 1-D
input is treated as a batch of one and the result is squeezed back.
Weights are stored ``(out, in)`` so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("linear", "relu", "softmax")


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "linear"

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class DenseNet:
    layers: list[Layer]
    rng_seed: int = 0

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ValueError("softmax is only allowed as the terminal activation")
            if i and layer.in_dim != self.layers[i - 1].out_dim:
                raise ValueError(
                    f"layer {i} expects {layer.in_dim} inputs, "
                    f"previous layer emits {self.layers[i - 1].out_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers],
            self.rng_seed,
        )


@dataclass
class GradientSet:
    dW: list[np.ndarray]
    db: list[np.ndarray]

    def flat(self) -> list[np.ndarray]:
        out = []
        for gw, gb in zip(self.dW, self.db):
            out += [gw, gb]
        return out

    @classmethod
    def zeros_like(cls, net: DenseNet) -> "GradientSet":
        return cls([np.zeros_like(l.W) for l in net.layers],
                   [np.zeros_like(l.b) for l in net.layers])


@dataclass
class Tape:
    """Cached layer inputs and pre-activations from one forward call."""

    net_id: int
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    outputs: list[np.ndarray]
    squeeze: bool


def init_net(sizes: Sequence[int], activations: Sequence[str], seed: int) -> DenseNet:
    """Kaiming-uniform for relu layers, Xavier-uniform otherwise, zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        if act == "relu":
            bound = np.sqrt(6.0 / n_in)
        else:
            bound = np.sqrt(6.0 / (n_in + n_out))
        W = rng.uniform(-bound, bound, size=(n_out, n_in))
        layers.append(Layer(W, np.zeros(n_out), act))
    return DenseNet(layers, seed)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[-1] != net.in_dim:
        raise ValueError(f"input has dimension {h.shape[-1]}, network expects {net.in_dim}")
    inputs, pre, outputs = [], [], []
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.W.T + layer.b
        pre.append(z)
        if layer.activation == "relu":
            h = np.maximum(z, 0.0)
        elif layer.activation == "softmax":
            h = softmax(z)
        else:
            h = z
        outputs.append(h)
    tape = Tape(id(net), inputs, pre, outputs, squeeze)
    return (h[0] if squeeze else h), tape


def backward(net: DenseNet, tape: Tape, dL_dout: np.ndarray) -> tuple[GradientSet, np.ndarray]:
    """Reverse-mode pass; parameter gradients are summed over the batch."""
    if tape.net_id != id(net) or len(tape.pre) != len(net.layers):
        raise ValueError("tape was not produced by this network")
    g = np.asarray(dL_dout, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise ValueError("upstream gradient does not match network output shape")
    dW = [None] * len(net.layers)
    db = [None] * len(net.layers)
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        if layer.activation == "relu":
            g = g * (tape.pre[i] > 0)
        elif layer.activation == "softmax":
            s = tape.outputs[i]
            g = s * (g - (g * s).sum(axis=-1, keepdims=True))
        dW[i] = g.T @ tape.inputs[i]
        db[i] = g.sum(axis=0)
        g = g @ layer.W
    return GradientSet(dW, db), (g[0] if tape.squeeze else g)


def grl(dL_dy: np.ndarray, lambda_grl: float) -> np.ndarray:
    """Backward rule of the gradient reversal layer; its forward pass is the identity."""
    return -lambda_grl * np.asarray(dL_dy, dtype=np.float64)


def softmax_xent(logits: np.ndarray, label) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Accepts a single logit vector with an integer label, or a batch with an
    integer array of labels (loss averaged over the batch).
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    y = np.atleast_1d(np.asarray(label))
    n_cls = z.shape[-1]
    if np.any(y < 0) or np.any(y >= n_cls):
        raise ValueError(f"label out of range for {n_cls} classes")
    rows = np.arange(len(y))
    top = z.argmax(axis=-1)
    shifted = z - z[rows, top][:, None]
    e = np.exp(shifted)
    e[rows, top] = 0.0
    # log1p keeps precision when the winning logit dominates
    logsum = np.log1p(e.sum(axis=-1))
    loss = float(np.mean(logsum - shifted[rows, y]))
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, y] -= 1.0
    grad /= len(y)
    return loss, (grad[0] if single else grad)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t_opt: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def _as_params(obj) -> list[np.ndarray]:
    if isinstance(obj, DenseNet):
        return obj.params()
    if isinstance(obj, GradientSet):
        return obj.flat()
    return list(obj)


def adam_step(net, grads, state: AdamState | None, lr: float):
    """Bias-corrected Adam update applied in place.

    ``net`` may be a DenseNet or any list of parameter arrays, ``grads`` a
    matching GradientSet or list.  Returns ``(net, state)``.
    """
    params = _as_params(net)
    gs = _as_params(grads)
    if state is None:
        state = AdamState.for_params(params)
    if len(params) != len(gs) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state counts differ")
    for p, g, m in zip(params, gs, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    state.t_opt += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t_opt
    c2 = 1.0 - b2 ** state.t_opt
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps_opt)
    return net, state


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def numeric_grad(f: Callable[[], float], params: Sequence[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of the scalar ``f()`` w.r.t. each array, perturbed in place."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def grad_check(net: DenseNet, loss_fn, x: np.ndarray, h: float = 1e-5) -> float:
    """Worst relative error between backprop and central differences.

    ``loss_fn(output)`` returns ``(loss, dL_doutput)``.  The input gradient
    is checked alongside every parameter.
    """
    x = np.array(x, dtype=np.float64)
    out, tape = forward(net, x)
    _, g_out = loss_fn(out)
    grads, g_in = backward(net, tape, g_out)

    def f():
        return loss_fn(forward(net, x)[0])[0]

    numeric = numeric_grad(f, net.params() + [x], h)
    analytic = grads.flat() + [g_in]
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
