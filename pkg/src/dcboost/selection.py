"""Adaptive k-NN consistency filtering.

Within each batch, cosine neighbors are retrieved once for the full search
budget m. For every candidate k the number n_s of samples whose top-k
neighbors all share the sample's pseudo-label yields score_k = k * n_s / n_B;
the k with the highest score (ties toward larger k) defines the
high-confidence set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import FeatureMatrix, LabelVector
from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

TARGET_ONLY = "target_only"
ONLINE_TARGET_HYBRID = "online_target_hybrid"


@dataclass(frozen=True)
class FilterConfig:
    m: int = 50
    fixed_k: int | None = None
    retrieval_source: str = TARGET_ONLY

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("search budget m must be >= 1")
        if self.fixed_k is not None and not (1 <= self.fixed_k <= self.m):
            raise ConfigError(f"fixed_k must lie in [1, m={self.m}]")
        if self.retrieval_source not in (TARGET_ONLY, ONLINE_TARGET_HYBRID):
            raise ConfigError(f"unknown retrieval_source {self.retrieval_source!r}")


@dataclass(frozen=True)
class BatchView:
    """One training batch: target features, optional online features, pseudo-labels."""

    indices: np.ndarray
    z_t: FeatureMatrix
    labels: LabelVector
    z_o: FeatureMatrix | None = None

    def __post_init__(self):
        n = self.z_t.n
        if n < 2:
            raise ShapeError("a batch needs at least 2 samples")
        if not self.z_t.normalized or (self.z_o is not None and not self.z_o.normalized):
            raise ValueError("batch features must be L2-normalized")
        if self.labels.n != n or len(self.indices) != n:
            raise ShapeError("indices, features and labels must agree on batch size")
        if self.z_o is not None and self.z_o.d != self.z_t.d:
            raise ShapeError("online and target features must share dimensionality")

    @property
    def n_b(self) -> int:
        return self.z_t.n


@dataclass(frozen=True)
class NeighborTable:
    """Per-sample neighbor positions (within batch), descending cosine similarity.

    Ties are broken by ascending position; self is excluded. m is the
    effective budget min(cfg.m, n_B - 1).
    """

    m: int
    neighbors: np.ndarray
    sims: np.ndarray


@dataclass(frozen=True)
class SelectionResult:
    counts: np.ndarray
    scores: np.ndarray
    k_star: int
    mask: np.ndarray
    x_h: np.ndarray


def build_neighbor_table(batch: BatchView, cfg: FilterConfig) -> NeighborTable:
    """Single cosine retrieval per batch; top-m' rows with deterministic ties."""
    zt = batch.z_t.data
    if cfg.retrieval_source == ONLINE_TARGET_HYBRID:
        if batch.z_o is None:
            raise ConfigError("hybrid retrieval needs online features")
        sim = 0.5 * (zt @ zt.T + batch.z_o.data @ batch.z_o.data.T)
    else:
        sim = zt @ zt.T
    np.fill_diagonal(sim, -np.inf)

    m_eff = min(cfg.m, batch.n_b - 1)
    if m_eff < cfg.m:
        logger.warning("search budget m=%d clamped to %d for batch of %d", cfg.m, m_eff, batch.n_b)
    # stable argsort of -sim: descending similarity, ties by ascending position
    order = np.argsort(-sim, axis=1, kind="stable")[:, :m_eff]
    sims = np.take_along_axis(sim, order, axis=1)
    return NeighborTable(m=m_eff, neighbors=order, sims=sims)


def _consistency(table: NeighborTable, labels: LabelVector) -> np.ndarray:
    """Boolean (n_B, m) matrix: sample i agrees with all of its top-k neighbors."""
    lbl = labels.labels
    if lbl.size != table.neighbors.shape[0]:
        raise ShapeError("labels and neighbor table are misaligned")
    agree = lbl[table.neighbors] == lbl[:, None]
    return np.logical_and.accumulate(agree, axis=1)


def selection_scores(table: NeighborTable, labels: LabelVector) -> tuple[np.ndarray, np.ndarray]:
    """Return (counts, scores) for k = 1..m.

    counts[k-1] is the number of samples consistent at depth k and
    scores[k-1] = k * counts[k-1] / n_B, computed as a single correctly
    rounded division of the exact integer numerator.
    """
    consistent = _consistency(table, labels)
    counts = consistent.sum(axis=0).astype(np.int64)
    n_b = table.neighbors.shape[0]
    ks = np.arange(1, table.m + 1, dtype=np.int64)
    scores = (ks * counts) / n_b
    return counts, scores


def select_adaptive_k(scores: np.ndarray) -> int:
    """argmax of the score curve, ties broken toward the larger k."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ShapeError("scores must be non-empty")
    return int(scores.size - 1 - np.argmax(scores[::-1])) + 1


def filter_high_confidence(table: NeighborTable, labels: LabelVector, k_star: int) -> SelectionResult:
    """High-confidence set at depth k_star: all top-k_star neighbors agree."""
    if not (1 <= k_star <= table.m):
        raise ConfigError(f"k_star must lie in [1, {table.m}]")
    counts, scores = selection_scores(table, labels)
    mask = _consistency(table, labels)[:, k_star - 1]
    return SelectionResult(
        counts=counts,
        scores=scores,
        k_star=k_star,
        mask=mask,
        x_h=np.flatnonzero(mask),
    )


def select(batch: BatchView, cfg: FilterConfig) -> SelectionResult:
    """Full per-batch pipeline: retrieval, score curve, adaptive (or fixed) k, X_h."""
    table = build_neighbor_table(batch, cfg)
    counts, scores = selection_scores(table, batch.labels)
    if cfg.fixed_k is not None:
        k_star = min(cfg.fixed_k, table.m)
        if k_star < cfg.fixed_k:
            logger.warning("fixed_k=%d clamped to %d for batch of %d", cfg.fixed_k, k_star, batch.n_b)
    else:
        k_star = select_adaptive_k(scores)
    mask = _consistency(table, batch.labels)[:, k_star - 1]
    return SelectionResult(counts=counts, scores=scores, k_star=k_star, mask=mask, x_h=np.flatnonzero(mask))
