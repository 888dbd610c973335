"""Per-epoch pseudo-label generation: k-means with k-means++ seeding.

Lloyd iterations with best-of-n_init restarts; the winner is picked by
(inertia, restart index) so results are bit-deterministic in the seed.
Empty clusters are reseeded to the point farthest from its assigned centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureMatrix, LabelVector
from .errors import ConfigError, ShapeError
from .rng import derive_rng


@dataclass(frozen=True)
class KMeansConfig:
    c: int
    max_iter: int = 300
    tol: float = 1e-6
    n_init: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.c < 2:
            raise ConfigError("c must be >= 2")
        if self.max_iter < 1 or self.n_init < 1:
            raise ConfigError("max_iter and n_init must be positive")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")


@dataclass(frozen=True)
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    iterations_run: int


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] + (centroids * centroids).sum(axis=1)[None, :]
    d -= 2.0 * (x @ centroids.T)
    np.maximum(d, 0.0, out=d)
    return d


def _kmeanspp_seed(x: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(c - 1):
        total = d2.sum()
        if total <= 0:  # remaining points duplicate the chosen ones
            idx.append(int(rng.integers(n)))
        else:
            idx.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, ((x - x[idx[-1]]) ** 2).sum(axis=1))
    return x[idx].copy()


def lloyd_single_run(
    x: np.ndarray, c: int, rng: np.random.Generator, max_iter: int, tol: float
) -> tuple[np.ndarray, float, int, list[float]]:
    """One seeded restart; returns (centroids, inertia, iterations, inertia trace)."""
    centroids = _kmeanspp_seed(x, c, rng)
    n = x.shape[0]
    rows = np.arange(n)
    x_sq = (x * x).sum(axis=1)
    prev_assign = None
    prev_inertia = np.inf
    trace: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        # reduced distances share the argmin with the true squared distances
        red = (centroids * centroids).sum(axis=1)[None, :] - 2.0 * (x @ centroids.T)
        assign = red.argmin(axis=1)
        point_d2 = np.maximum(x_sq + red[rows, assign], 0.0)
        inertia = float(point_d2.sum())
        trace.append(inertia)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        if prev_assign is not None and prev_inertia - inertia <= tol * max(inertia, 1e-300):
            break
        counts = np.bincount(assign, minlength=c)
        onehot = np.zeros((c, n))
        onehot[assign, rows] = 1.0
        new_centroids = onehot @ x
        nonempty = counts > 0
        new_centroids[nonempty] /= counts[nonempty, None]
        empties = np.flatnonzero(~nonempty)
        if empties.size:
            far = point_d2.copy()
            for e in empties:
                pick = int(far.argmax())
                new_centroids[e] = x[pick]
                far[pick] = -np.inf
        centroids = new_centroids
        prev_assign = assign
        prev_inertia = inertia
    return centroids, trace[-1], it, trace


def kmeans_fit(features: FeatureMatrix, cfg: KMeansConfig) -> KMeansModel:
    """Best of n_init seeded k-means++ restarts by (inertia, restart index)."""
    x = features.data
    if x.shape[0] < cfg.c:
        raise ConfigError(f"need at least c={cfg.c} samples, got {x.shape[0]}")
    best = None
    for r in range(cfg.n_init):
        rng = derive_rng(cfg.seed, f"kmeans-restart-{r}")
        centroids, inertia, iters, _ = lloyd_single_run(x, cfg.c, rng, cfg.max_iter, cfg.tol)
        if best is None or inertia < best[0]:
            best = (inertia, r, centroids, iters)
    return KMeansModel(centroids=best[2], inertia=best[0], iterations_run=best[3])


def assign(model: KMeansModel, features: FeatureMatrix) -> LabelVector:
    """Nearest-centroid labels; ties go to the lower centroid index."""
    if features.d != model.centroids.shape[1]:
        raise ShapeError(f"features have d={features.d}, centroids d={model.centroids.shape[1]}")
    labels = _sq_dists(features.data, model.centroids).argmin(axis=1)
    return LabelVector(labels, num_classes=model.centroids.shape[0])


def softmax_assign(logits: np.ndarray) -> LabelVector:
    """Per-row argmax of classifier logits; ties go to the lower index."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError("logits must be 2-d")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite values")
    return LabelVector(logits.argmax(axis=1), num_classes=logits.shape[1])
