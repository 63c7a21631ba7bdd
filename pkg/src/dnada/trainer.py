"""Combined objective, adversarial training loop and target-side inference."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .condnoise import (ForwardHeads, NoiseGenerator, gen_backward, gen_forward,
                        init_forward_heads, init_generator)
from .datapipe import DatasetSplit, FeatureVector, stack
from .diffusion import NoiseSchedule, build_schedule, noise_to_step, noising_weights
from .nncore import (AdamState, DenseNet, adam_step, backward, forward, init_net,
                     softmax, softmax_xent)
from .noisepred import PredictorNet, init_predictor, predict_backward, predict_forward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 0.001
    lambda_act: float = 1.0
    lambda_binary: float = 1.0
    lambda_adv: float = 1.0
    lambda_act_source: float = 1.0
    gamma_a: float = 1.0
    gamma_u: float = 1.0
    gamma_as: float = 1.0
    lambda_grl: float = 1.0
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    batch_size: int = 64
    seed: int = 0
    sqrt_mode: bool = False
    fixed_unit_var: bool = True
    infer_passes: int = 10
    temb_dim: int = 16
    # let the reversed discriminator gradient continue through x_t into the generator
    grl_into_generator: bool = False

    def validate(self) -> "TrainConfig":
        errors = []
        for name in ("epochs", "T", "batch_size", "infer_passes"):
            if getattr(self, name) < 1 and not (name == "epochs" and self.epochs == 0):
                errors.append(f"{name} must be >= 1")
        if not self.lr > 0:
            errors.append("lr must be > 0")
        for name in ("lambda_act", "lambda_binary", "lambda_adv", "lambda_act_source",
                     "gamma_a", "gamma_u", "gamma_as", "lambda_grl"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if self.batch_size < 2:
            errors.append("batch_size must be >= 2 to hold source and target samples")
        if self.temb_dim % 2:
            errors.append("temb_dim must be even")
        if errors:
            raise ValueError("; ".join(errors))
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LossBreakdown:
    l_noise: float = 0.0
    l_act: float = 0.0
    l_binary: float = 0.0
    l_adv_a: float = 0.0
    l_adv_u: float = 0.0
    l_act_source: float = 0.0
    l_total: float = 0.0

    @staticmethod
    def combine(parts: dict, cfg: TrainConfig) -> float:
        return (parts["l_noise"] + cfg.lambda_act * parts["l_act"]
                + cfg.lambda_binary * parts["l_binary"]
                + cfg.lambda_adv * (parts["l_adv_a"] + parts["l_adv_u"])
                + cfg.lambda_act_source * parts["l_act_source"])


@dataclass
class Models:
    gen: NoiseGenerator
    heads: ForwardHeads
    pred: PredictorNet
    sched: NoiseSchedule
    n_source: int
    n_activity: int
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    _tables: tuple = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.gen.emb.dim

    def params(self) -> list[np.ndarray]:
        return self.gen.params() + self.heads.params() + self.pred.params()

    def tables(self):
        """Per-timestep unrolled noising weights, padded to ``T`` columns."""
        if self._tables is None:
            T = self.sched.T
            signal = np.zeros(T)
            W = np.zeros((T, T))
            for t in range(1, T + 1):
                signal[t - 1], W[t - 1, :t] = noising_weights(t, self.sched)
            self._tables = (signal, W)
        return self._tables


def init_models(dim: int, n_source: int, n_activity: int, cfg: TrainConfig) -> Models:
    seeds = [int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(3)]
    sched = build_schedule(cfg.T, cfg.beta_start, cfg.beta_end, cfg.sqrt_mode)
    return Models(
        gen=init_generator(dim, n_activity, seeds[0], cfg.gamma_a, cfg.gamma_u, cfg.fixed_unit_var),
        heads=init_forward_heads(dim, n_activity, seeds[1]),
        pred=init_predictor(dim, n_source, n_activity, cfg.T, seeds[2], cfg.temb_dim),
        sched=sched,
        n_source=n_source,
        n_activity=n_activity,
    )


def loss_noise(eps, eps_hat) -> float:
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    eps_hat = np.atleast_2d(np.asarray(eps_hat, dtype=np.float64))
    if eps.shape != eps_hat.shape:
        raise ValueError(f"noise shapes differ: {eps.shape} vs {eps_hat.shape}")
    return float(np.mean(np.sum((eps - eps_hat) ** 2, axis=1)))


def _xent_masked(logits, labels, mask):
    """Cross-entropy averaged over rows where ``mask`` holds; zero rows elsewhere."""
    grad = np.zeros_like(logits)
    if not mask.any():
        return 0.0, grad
    loss, g = softmax_xent(logits[mask], labels[mask])
    grad[mask] = g
    return loss, grad


@dataclass
class NoisingDraw:
    t: np.ndarray
    x_t: np.ndarray
    eps_bar: np.ndarray
    c: np.ndarray = field(repr=False)
    zw: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    gtape: object = field(repr=False)


def draw_noising(models: Models, X: np.ndarray, ca, cu, rng: np.random.Generator) -> NoisingDraw:
    """Noise ``X`` to a uniform random timestep with generator noise.

    ``eps_bar`` is the weight-averaged per-step draw, so that
    ``x_t = signal * x0 + c * eps_bar``; at ``t = 1`` it is the single draw.
    """
    B, D = X.shape
    sched = models.sched
    _, W = models.tables()
    t = rng.integers(1, sched.T + 1, size=B)
    tmax = int(t.max())
    z = rng.standard_normal((tmax, B, D))
    g, gtape = gen_forward(models.gen, X, ca, cu)
    sigma = np.exp(0.5 * g.log_var)
    x_t = noise_to_step(X, t, g.mean[None] + sigma[None] * z, sched)
    wt = W[t - 1, :tmax]
    c = wt.sum(axis=1)[:, None]
    zw = np.einsum("bs,sbd->bd", wt, z)
    return NoisingDraw(t, x_t, g.mean + sigma * zw / c, c, zw, sigma, gtape)


def batch_losses(batch: Sequence[FeatureVector], models: Models, cfg: TrainConfig,
                 rng: np.random.Generator) -> tuple[LossBreakdown, list[np.ndarray]]:
    """Loss components and gradients for ``models.params()`` on one batch.

    Adversarial losses are reported as positive cross-entropies; the sign
    flip lives in the gradient reversal on the predictor trunk.
    """
    X, ca, cu = stack(batch)
    if np.any(ca < 0):
        raise ValueError("every batch sample needs an activity or pseudo-label")
    src = cu == 0
    if cfg.lambda_act_source > 0 and not src.any():
        raise ValueError("batch has no source samples but lambda_act_source > 0")
    cas = np.array([-1 if s.source_activity is None else s.source_activity for s in batch])
    nd = draw_noising(models, X, ca, cu, rng)
    x_t, eps_bar, t, c, zw, sigma = nd.x_t, nd.eps_bar, nd.t, nd.c, nd.zw, nd.sigma
    B = len(X)

    act_logits, tp_act = forward(models.heads.act_head, eps_bar)
    dom_logits, tp_dom = forward(models.heads.dom_head, eps_bar)
    l_act, g_act = softmax_xent(act_logits, ca)
    l_bin, g_bin = softmax_xent(dom_logits, cu)

    out, ptape = predict_forward(x_t, t, models.pred)
    diff = out.eps_hat - eps_bar
    l_noise = float(np.mean(np.sum(diff ** 2, axis=1)))
    l_cas, g_cas = _xent_masked(out.logits_cas, cas, src)
    l_adv_a, g_adv_a = softmax_xent(out.logits_adv_a, ca)
    l_adv_u, g_adv_u = softmax_xent(out.logits_adv_u, cu)

    parts = dict(l_noise=l_noise, l_act=l_act, l_binary=l_bin, l_adv_a=l_adv_a,
                 l_adv_u=l_adv_u, l_act_source=l_cas)
    losses = LossBreakdown(**parts, l_total=LossBreakdown.combine(parts, cfg))

    d_eps_hat = 2.0 * diff / B
    pred_grads, d_xt = predict_backward(
        models.pred, ptape, d_eps_hat,
        cfg.lambda_act_source * cfg.gamma_as * g_cas,
        cfg.lambda_adv * g_adv_a, cfg.lambda_adv * g_adv_u,
        lambda_grl=cfg.lambda_grl, scale_adv_a=cfg.gamma_a, scale_adv_u=cfg.gamma_u,
        reverse_into_input=cfg.grl_into_generator)
    gh_act, d_e1 = backward(models.heads.act_head, tp_act, cfg.lambda_act * g_act)
    gh_dom, d_e2 = backward(models.heads.dom_head, tp_dom, cfg.lambda_binary * g_bin)
    d_eps_bar = -d_eps_hat + d_e1 + d_e2

    d_mean = c * d_xt + d_eps_bar
    d_log_var = None
    if not models.gen.fixed_unit_var:
        d_sigma = zw * d_xt + (zw / c) * d_eps_bar
        d_log_var = 0.5 * sigma * d_sigma
    gen_grads = gen_backward(models.gen, nd.gtape, d_mean, d_log_var)
    return losses, gen_grads + gh_act.flat() + gh_dom.flat() + pred_grads


def predict_proba(models: Models, X: np.ndarray, cfg: TrainConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """Source-class probabilities averaged over ``cfg.infer_passes`` noisings.

    Labels are unknown at test time, so each pass noises with zero-mean unit
    noise at a uniformly drawn timestep.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    T = models.sched.T
    probs = np.zeros((len(X), models.n_source))
    for _ in range(cfg.infer_passes):
        t = rng.integers(1, T + 1, size=len(X))
        z = rng.standard_normal((int(t.max()), len(X), X.shape[1]))
        x_t = noise_to_step(X, t, z, models.sched)
        out, _ = predict_forward(x_t, t, models.pred)
        probs += softmax(out.logits_cas)
    return probs / cfg.infer_passes


def predict(models: Models, x0, cfg: TrainConfig, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    p = predict_proba(models, np.asarray(x0)[None, :], cfg, rng)[0]
    return int(np.argmax(p)), p


def evaluate(models: Models, samples: Sequence[FeatureVector], cfg: TrainConfig,
             rng: np.random.Generator) -> float:
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    X, y, _ = stack(samples)
    pred = predict_proba(models, X, cfg, rng).argmax(axis=1)
    return float(np.mean(pred == y))


def confusion(models: Models, samples: Sequence[FeatureVector], cfg: TrainConfig,
              rng: np.random.Generator) -> np.ndarray:
    X, y, _ = stack(samples)
    pred = predict_proba(models, X, cfg, rng).argmax(axis=1)
    n = max(models.n_source, int(y.max()) + 1)
    cm = np.zeros((n, n), dtype=np.int64)
    np.add.at(cm, (y, pred), 1)
    return cm


@dataclass
class FitResult:
    models: Models
    history: list[dict]
    best_epoch: int
    best_val: float
    opt_state: AdamState | None = None


def _eval_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0x5EED, epoch])


def _batches(n_src: int, n_tgt: int, half: int, rng: np.random.Generator):
    """50/50 source/target index batches covering the source set once."""
    src = rng.permutation(n_src)
    n_batches = math.ceil(n_src / half)
    reps = math.ceil(n_batches * half / n_tgt)
    tgt = np.concatenate([rng.permutation(n_tgt) for _ in range(reps)])
    for b in range(n_batches):
        yield src[b * half:(b + 1) * half], tgt[b * half:(b + 1) * half]


def fit(split: DatasetSplit, cfg: TrainConfig, progress: bool = False) -> FitResult:
    cfg.validate()
    if not split.train_source or not split.train_target:
        raise ValueError("training needs both source and target samples")
    dim = split.train_source[0].x0.size
    n_source = split.n_source_classes or (max(s.activity for s in split.train_source) + 1)
    n_activity = max(n_source, max(s.activity for s in split.train_target) + 1)
    models = init_models(dim, n_source, n_activity, cfg)
    models.norm_mean, models.norm_std = split.norm_mean, split.norm_std
    params = models.params()
    state = AdamState.for_params(params)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best = (-1.0, 0, copy.deepcopy(models), copy.deepcopy(state))
    half = max(1, cfg.batch_size // 2)
    names = [f.name for f in fields(LossBreakdown)]

    for epoch in range(1, cfg.epochs + 1):
        sums = dict.fromkeys(names, 0.0)
        n_b = 0
        for si, ti in _batches(len(split.train_source), len(split.train_target), half, rng):
            batch = [split.train_source[i] for i in si] + [split.train_target[i] for i in ti]
            losses, grads = batch_losses(batch, models, cfg, rng)
            adam_step(params, grads, state, cfg.lr)
            for k in names:
                sums[k] += getattr(losses, k)
            n_b += 1
        rec = {"epoch": epoch, **{k: v / n_b for k, v in sums.items()}}
        rec["val_acc"] = evaluate(models, split.val_target, cfg, _eval_rng(cfg.seed, epoch)) \
            if split.val_target else float("nan")
        history.append(rec)
        if rec["val_acc"] > best[0]:
            best = (rec["val_acc"], epoch, copy.deepcopy(models), copy.deepcopy(state))
        if progress:
            log.info("epoch %d total %.4f val %.4f", epoch, rec["l_total"], rec["val_acc"])

    if not history:
        return FitResult(models, history, 0, float("nan"), state)
    return FitResult(best[2], history, best[1], best[0], best[3])


def fit_source_only(split: DatasetSplit, cfg: TrainConfig) -> DenseNet:
    """Plain MLP on source features only, same optimizer and budget."""
    X, y, _ = stack(split.train_source)
    n_cls = split.n_source_classes or int(y.max()) + 1
    D = X.shape[1]
    net = init_net([D, 4 * D, 4 * D, n_cls], ["relu", "relu", "linear"], cfg.seed)
    state = AdamState.for_params(net.params())
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(X))
        for b in range(0, len(X), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            out, tape = forward(net, X[idx])
            _, g = softmax_xent(out, y[idx])
            grads, _ = backward(net, tape, g)
            adam_step(net, grads, state, cfg.lr)
    return net


def classifier_accuracy(net: DenseNet, samples: Sequence[FeatureVector]) -> float:
    X, y, _ = stack(samples)
    return float(np.mean(forward(net, X)[0].argmax(axis=1) == y))


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
