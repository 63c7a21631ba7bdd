"""Deterministic single-file checkpoints.

The file is JSON; every array is stored as base64 of its little-endian
float64 bytes, so a save/load round trip is exact and two identical runs
produce identical bytes.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .nncore import AdamState
from .trainer import Models, TrainConfig, init_models

FORMAT_TAG = "dnada-checkpoint/1"


def _enc(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).copy()


def config_hash(cfg: TrainConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, models: Models, cfg: TrainConfig, state: AdamState | None = None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    doc = {
        "format": FORMAT_TAG,
        "config": asdict(cfg),
        "config_hash": config_hash(cfg),
        "schedule": models.sched.to_dict(),
        "dims": {"dim": models.dim, "n_source": models.n_source, "n_activity": models.n_activity},
        "params": [_enc(p) for p in models.params()],
        "norm": None if models.norm_mean is None else
                {"mean": _enc(models.norm_mean), "std": _enc(models.norm_std)},
        "optimizer": None if state is None else {
            "t_opt": state.t_opt, "beta1": state.beta1, "beta2": state.beta2,
            "eps_opt": state.eps_opt,
            "m": [_enc(m) for m in state.m], "v": [_enc(v) for v in state.v],
        },
        "extra": extra or {},
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=1))
    return path


def load_checkpoint(path) -> tuple[Models, TrainConfig, AdamState | None, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: unsupported checkpoint format {doc.get('format')!r}")
    cfg = TrainConfig.from_dict(doc["config"])
    dims = doc["dims"]
    models = init_models(dims["dim"], dims["n_source"], dims["n_activity"], cfg)
    params = models.params()
    if len(params) != len(doc["params"]):
        raise ValueError(f"{path}: parameter count does not match the architecture")
    for p, enc in zip(params, doc["params"]):
        arr = _dec(enc)
        if arr.shape != p.shape:
            raise ValueError(f"{path}: parameter shape {arr.shape} != expected {p.shape}")
        p[...] = arr
    if doc["norm"] is not None:
        models.norm_mean = _dec(doc["norm"]["mean"])
        models.norm_std = _dec(doc["norm"]["std"])
    state = None
    opt = doc["optimizer"]
    if opt is not None:
        state = AdamState([_dec(m) for m in opt["m"]], [_dec(v) for v in opt["v"]],
                          opt["t_opt"], opt["beta1"], opt["beta2"], opt["eps_opt"])
    return models, cfg, state, doc["extra"]
