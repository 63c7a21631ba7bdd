"""Sensor CSV ingestion, sliding windows, statistical features, pseudo-labels
and the target validation/test split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm

FEATURE_NAMES = ("mean", "std", "min", "max", "range", "median", "rms", "mad", "iqr")


class DataError(ValueError):
    """Raised for malformed or insufficient input data."""


@dataclass
class CsvSchema:
    timestamp: str = "timestamp"
    channels: Sequence[str] = ()
    activity: str | None = "activity"


@dataclass
class SensorRows:
    timestamps: np.ndarray
    values: np.ndarray  # (rows, channels)
    activity: np.ndarray | None = None
    channels: tuple[str, ...] = ()

    def __len__(self):
        return len(self.timestamps)


@dataclass
class SensorWindow:
    samples: np.ndarray
    sample_rate_hz: float
    activity_label: int | None = None
    user_id: str = ""


@dataclass
class FeatureVector:
    x0: np.ndarray
    activity: int | None = None
    domain: int = 0
    source_activity: int | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        if not np.all(np.isfinite(self.x0)):
            raise DataError("feature vector has non-finite entries")
        if self.domain not in (0, 1):
            raise DataError("domain must be 0 (source) or 1 (target)")


@dataclass
class DatasetSplit:
    train_source: list[FeatureVector]
    train_target: list[FeatureVector]
    val_target: list[FeatureVector]
    test_target: list[FeatureVector]
    n_source_classes: int = 0
    norm_mean: np.ndarray | None = field(default=None, repr=False)
    norm_std: np.ndarray | None = field(default=None, repr=False)


def load_csv(path, schema: CsvSchema) -> SensorRows:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        channels = list(schema.channels) or [
            h for h in header if h not in (schema.timestamp, schema.activity)
        ]
        missing = [c for c in [schema.timestamp, *channels] if c not in header]
        if missing:
            raise DataError(f"{path}: schema columns missing from header: {missing}")
        ts_idx = header.index(schema.timestamp)
        ch_idx = [header.index(c) for c in channels]
        act_idx = header.index(schema.activity) if schema.activity in header else None

        ts, vals, acts = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                t = float(row[ts_idx])
                v = [float(row[i]) for i in ch_idx]
                a = int(float(row[act_idx])) if act_idx is not None else None
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric or blank cell") from None
            if not all(math.isfinite(x) for x in [t, *v]):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if ts and t <= ts[-1]:
                raise DataError(f"{path}:{lineno}: timestamps are not strictly increasing")
            ts.append(t)
            vals.append(v)
            acts.append(a)
    return SensorRows(
        np.asarray(ts),
        np.asarray(vals, dtype=np.float64).reshape(len(ts), len(channels)),
        np.asarray(acts, dtype=np.int64) if act_idx is not None else None,
        tuple(channels),
    )


def make_windows(rows: SensorRows, sample_rate_hz: float, window_seconds: float = 3.0,
                 overlap: float = 0.5, user_id: str = "") -> list[SensorWindow]:
    if not 0.0 <= overlap < 1.0:
        raise DataError("overlap must lie in [0, 1)")
    if sample_rate_hz <= 0:
        raise DataError("sample rate must be positive")
    length = int(round(window_seconds * sample_rate_hz))
    if length < 2:
        raise DataError("window must span at least 2 samples")
    if len(rows) < length:
        raise DataError(f"need at least {length} rows for one window, got {len(rows)}")
    stride = max(1, int(round(length * (1.0 - overlap))))
    out = []
    for start in range(0, len(rows) - length + 1, stride):
        label = None
        if rows.activity is not None:
            seg = rows.activity[start:start + length]
            if np.any(seg != seg[0]):
                continue
            label = int(seg[0])
        out.append(SensorWindow(rows.values[start:start + length], sample_rate_hz, label, user_id))
    return out


def extract_features(w: SensorWindow, domain: int = 0) -> FeatureVector:
    """Nine time-domain statistics per channel, channel-major."""
    s = np.asarray(w.samples, dtype=np.float64)
    mean = s.mean(axis=0)
    lo, hi = s.min(axis=0), s.max(axis=0)
    q25, med, q75 = np.percentile(s, [25, 50, 75], axis=0)
    stats = np.stack([
        mean,
        s.std(axis=0),
        lo,
        hi,
        hi - lo,
        med,
        np.sqrt(np.mean(s * s, axis=0)),
        np.mean(np.abs(s - mean), axis=0),
        q75 - q25,
    ], axis=1)
    src = w.activity_label if domain == 0 else None
    return FeatureVector(stats.reshape(-1), w.activity_label, domain, src)


def stack(samples: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature matrix, activity ids (-1 when absent) and domain ids."""
    X = np.stack([s.x0 for s in samples])
    a = np.array([-1 if s.activity is None else s.activity for s in samples], dtype=np.int64)
    d = np.array([s.domain for s in samples], dtype=np.int64)
    return X, a, d


def cluster_pseudo_labels(target: Sequence[FeatureVector], k: int, seed: int,
                          n_source_classes: int = 0) -> list[FeatureVector]:
    """k-means (k-means++ init, fixed seed) cluster ids offset past the source ids."""
    from sklearn.cluster import KMeans

    if not target:
        raise DataError("no target samples to cluster")
    if not 1 <= k <= len(target):
        raise DataError(f"k={k} must lie in 1..{len(target)}")
    X = np.stack([s.x0 for s in target])
    km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed)
    ids = km.fit_predict(X)
    return [replace(s, activity=int(c) + n_source_classes, source_activity=None)
            for s, c in zip(target, ids)]


def split_target(target: Sequence[FeatureVector]) -> tuple[list, list]:
    if len(target) < 2:
        raise DataError("need at least 2 target samples to split")
    half = math.ceil(len(target) / 2)
    return list(target[:half]), list(target[half:])


def fit_normalizer(*groups: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    X = np.concatenate([np.stack([s.x0 for s in g]) for g in groups if g])
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return mu, sd


def normalize(samples: Sequence[FeatureVector], mu: np.ndarray, sd: np.ndarray) -> list[FeatureVector]:
    return [replace(s, x0=(s.x0 - mu) / sd) for s in samples]


def build_split(source: Sequence[FeatureVector], target: Sequence[FeatureVector],
                seed: int = 0, n_clusters: int | None = None) -> DatasetSplit:
    """Chronological target split, pseudo-labels and z-normalization.

    ``target`` must carry its true labels; training only ever sees the
    unlabeled, cluster-labeled copies of the validation half.
    """
    n_src = int(max(s.activity for s in source)) + 1
    val, test = split_target(target)
    unlabeled = [replace(s, activity=None, source_activity=None) for s in val]
    mu, sd = fit_normalizer(source, unlabeled)
    src_n = normalize(source, mu, sd)
    val_n = normalize(val, mu, sd)
    test_n = normalize(test, mu, sd)
    k = n_clusters or len({s.activity for s in source})
    k = min(k, len(unlabeled))
    train_t = cluster_pseudo_labels(normalize(unlabeled, mu, sd), k, seed, n_src)
    return DatasetSplit(src_n, train_t, val_n, test_n, n_src, mu, sd)


def synth_domains(n_per_class: int, classes: int, dim: int, shift: float,
                  seed: int, center_scale: float = 3.0, max_angle: float = 0.2
                  ) -> tuple[list[FeatureVector], list[FeatureVector]]:
    """Offline source/target pair of Gaussian class mixtures.

    Source classes are unit-variance Gaussians centred on ``center_scale``
    times orthonormal directions.  The target repeats them, rotated by a
    random rotation of at most ``max_angle`` radians and translated by
    ``shift`` along a random unit vector that makes a 45-65 degree angle
    with a random direction in the span of the class centres.  Target
    samples are shuffled so both chronological halves contain every class.
    """
    if min(n_per_class, classes, dim) <= 0 or shift < 0:
        raise DataError("synth_domains arguments must be positive")
    rng = np.random.default_rng(seed)
    if classes <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, classes)))
        centers = center_scale * q.T
    else:
        centers = center_scale * rng.standard_normal((classes, dim))
    u = rng.standard_normal(dim)
    if classes > 1 and dim > 1:
        diffs = centers - centers.mean(axis=0)
        a = rng.standard_normal(classes) @ diffs
        a /= np.linalg.norm(a)
        r = u - (u @ a) * a
        r /= np.linalg.norm(r)
        phi = np.deg2rad(rng.uniform(45.0, 65.0))
        u = np.cos(phi) * a + np.sin(phi) * r
    u /= np.linalg.norm(u)
    A = rng.standard_normal((dim, dim))
    A = A - A.T
    norm = np.linalg.norm(A, 2)
    R = expm(max_angle * A / norm) if norm > 0 else np.eye(dim)

    source, target = [], []
    for c in range(classes):
        for x in centers[c] + rng.standard_normal((n_per_class, dim)):
            source.append(FeatureVector(x, c, 0, c))
    tgt = []
    for c in range(classes):
        pts = (centers[c] + rng.standard_normal((n_per_class, dim))) @ R.T + shift * u
        tgt += [(x, c) for x in pts]
    for i in rng.permutation(len(tgt)):
        x, c = tgt[i]
        target.append(FeatureVector(x, c, 1, None))
    return source, target
