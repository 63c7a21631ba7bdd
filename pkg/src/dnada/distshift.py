"""Cross-user feature-distribution distance with bootstrap resampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datapipe import FeatureVector


@dataclass
class BootstrapReport:
    activity: int
    observed_distance: float
    bootstrap_distances: np.ndarray = field(repr=False)
    proportion: float

    @property
    def n_boot(self) -> int:
        return len(self.bootstrap_distances)


def _as_matrix(samples) -> np.ndarray:
    if len(samples) and isinstance(samples[0], FeatureVector):
        return np.stack([s.x0 for s in samples])
    X = np.asarray(samples, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


def w1_1d(a: np.ndarray, b: np.ndarray) -> float:
    """W1 between two 1-D empirical distributions via the CDF difference integral."""
    a = np.sort(a)
    b = np.sort(b)
    both = np.concatenate([a, b])
    both.sort(kind="mergesort")
    gaps = np.diff(both)
    cdf_a = np.searchsorted(a, both[:-1], side="right") / len(a)
    cdf_b = np.searchsorted(b, both[:-1], side="right") / len(b)
    return float(np.sum(np.abs(cdf_a - cdf_b) * gaps))


def _w1_matrix(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.mean([w1_1d(A[:, j], B[:, j]) for j in range(A.shape[1])]))


def w1_distance(A, B) -> float:
    """Mean over feature dimensions of the marginal 1-D W1 distances."""
    A, B = _as_matrix(A), _as_matrix(B)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("both sample sets must be non-empty")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return _w1_matrix(A, B)


def _proportion(boot: np.ndarray, observed: float) -> float:
    return float(np.count_nonzero(boot <= observed)) / len(boot)


def bootstrap(A, B, n_boot: int = 5000, seed: int = 0, activity: int = -1) -> BootstrapReport:
    """Observed distance plus ``n_boot`` with-replacement resampled distances.

    Iteration ``i`` draws from its own generator seeded by ``(seed, i)``, so
    results do not depend on evaluation order.
    """
    A, B = _as_matrix(A), _as_matrix(B)
    observed = w1_distance(A, B)
    if n_boot < 1:
        raise ValueError("n_boot must be positive")
    boot = np.empty(n_boot)
    for i in range(n_boot):
        rng = np.random.default_rng([seed, i])
        ia = rng.integers(0, len(A), size=len(A))
        ib = rng.integers(0, len(B), size=len(B))
        boot[i] = _w1_matrix(A[ia], B[ib])
    return BootstrapReport(activity, observed, boot, _proportion(boot, observed))


@dataclass
class DatasetReport:
    reports: list[BootstrapReport]
    avg_distance: float
    avg_proportion: float


def dataset_report(source: Sequence[FeatureVector], target: Sequence[FeatureVector],
                   n_boot: int = 5000, seed: int = 0) -> DatasetReport:
    by_src: dict[int, list] = {}
    by_tgt: dict[int, list] = {}
    for s in source:
        by_src.setdefault(s.activity, []).append(s)
    for s in target:
        by_tgt.setdefault(s.activity, []).append(s)
    common = sorted(k for k in set(by_src) & set(by_tgt) if k is not None)
    if not common:
        raise ValueError("source and target share no activity labels")
    reports = [bootstrap(by_src[a], by_tgt[a], n_boot, seed + a, activity=a) for a in common]
    return DatasetReport(
        reports,
        float(np.mean([r.observed_distance for r in reports])),
        float(np.mean([r.proportion for r in reports])),
    )
