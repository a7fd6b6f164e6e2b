"""Seeded k-means++ / Lloyd clustering, silhouette scores and silhouette-based choice of k."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 2
    max_iterations: int = 300
    n_init: int = 10
    seed: int = 0
    tol: float = 1e-6

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.n_init < 1 or self.max_iterations < 1:
            raise ConfigError("n_init and max_iterations must be >= 1")


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    inertia_trace: list[float] = field(default_factory=list, repr=False)
    restart_inertias: list[float] = field(default_factory=list, repr=False)
    restart_traces: list[list[float]] = field(default_factory=list, repr=False)


def _as_array(vectors) -> np.ndarray:
    if len(vectors) and hasattr(vectors[0], "values"):
        dims = {v.dimension for v in vectors}
        if len(dims) != 1:
            raise ConfigError(f"vectors have mixed dimensions {sorted(dims)}")
        return np.vstack([v.values for v in vectors])
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError("expected a 2-D array of vectors")
    return X


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # explicit differences: the expanded form loses exact zeros and monotonicity
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _pairwise(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(1)
    d = np.maximum(sq[:, None] - 2.0 * X @ X.T + sq[None, :], 0.0)
    return np.sqrt(d)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[int(rng.integers(n))]]
    closest = _sq_dists(X, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.vstack(centers)


def _lloyd(X: np.ndarray, centers: np.ndarray, cfg: ClusterConfig):
    trace = []
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        d = _sq_dists(X, centers)
        labels = np.argmin(d, axis=1)
        point_d = d[np.arange(X.shape[0]), labels]
        trace.append(float(point_d.sum()))
        new = centers.copy()
        counts = np.bincount(labels, minlength=cfg.k)
        for c in range(cfg.k):
            if counts[c]:
                new[c] = X[labels == c].mean(axis=0)
        taken: set[int] = set()
        for c in np.flatnonzero(counts == 0):
            # reseed an empty cluster on the point farthest from its centroid
            order = np.argsort(-point_d, kind="stable")
            far = next(int(i) for i in order if int(i) not in taken)
            taken.add(far)
            new[c] = X[far]
            point_d[far] = 0.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < cfg.tol:
            break
    d = _sq_dists(X, centers)
    labels = np.argmin(d, axis=1)
    inertia = float(d[np.arange(X.shape[0]), labels].sum())
    trace.append(inertia)
    return labels, centers, inertia, it, trace


def kmeans(vectors, cfg: ClusterConfig) -> ClusterResult:
    """Best-of-``n_init`` k-means; each restart seeds k-means++ from its own spawned seed."""
    X = _as_array(vectors)
    n = X.shape[0]
    if cfg.k > n:
        raise DataError(f"k={cfg.k} exceeds the number of points ({n})")
    best = None
    inertias, traces = [], []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.n_init):
        rng = np.random.default_rng(child)
        labels, centers, inertia, iters, trace = _lloyd(X, kmeans_plusplus(X, cfg.k, rng), cfg)
        inertias.append(inertia)
        traces.append(trace)
        if best is None or inertia < best.inertia:
            best = ClusterResult(labels, centers, inertia, iters, trace)
    best.restart_inertias = inertias
    best.restart_traces = traces
    return best


def silhouette_samples(vectors, assignments) -> np.ndarray:
    X = _as_array(vectors)
    labels = np.asarray(assignments)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise DataError("silhouette needs at least two non-empty clusters")
    D = _pairwise(X)
    np.fill_diagonal(D, 0.0)
    s = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == c].mean() for c in uniq if c != labels[i])
        m = max(a, b)
        s[i] = (b - a) / m if m > 0 else 0.0
    return s


def silhouette(vectors, assignments) -> float:
    """Mean silhouette; singleton-cluster points and 0/0 cases score 0."""
    return float(silhouette_samples(vectors, assignments).mean())


@dataclass
class ChooseKResult:
    k: int
    scores: dict[int, float]
    result: ClusterResult


def choose_k(vectors, k_range: tuple[int, int], cfg: ClusterConfig = ClusterConfig(),
             warnings: list | None = None) -> ChooseKResult:
    """Run k-means for each k in the inclusive range and keep the best mean silhouette (ties: smaller k)."""
    X = _as_array(vectors)
    n = X.shape[0]
    lo, hi = k_range
    if n < 3:
        raise DataError(f"choosing k needs at least 3 points, got {n}")
    if lo < 2 or hi > n - 1 or lo > hi:
        raise ConfigError(f"k range {lo}..{hi} must lie within 2..{n - 1}")
    if np.all(X == X[0]):
        msg = "all points identical; silhouette undefined, using k=2"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        res = kmeans(X, ClusterConfig(2, cfg.max_iterations, cfg.n_init, cfg.seed, cfg.tol))
        return ChooseKResult(2, {2: 0.0}, res)
    scores, results = {}, {}
    for k in range(lo, hi + 1):
        res = kmeans(X, ClusterConfig(k, cfg.max_iterations, cfg.n_init, cfg.seed, cfg.tol))
        results[k] = res
        scores[k] = silhouette(X, res.assignments) if len(np.unique(res.assignments)) > 1 else 0.0
    top = max(scores.values())
    k = min(k for k, s in scores.items() if s >= top - 1e-12)
    return ChooseKResult(k, scores, results[k])
