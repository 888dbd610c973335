"""Clustering evaluation and structure diagnostics.

NMI uses the sqrt (geometric-mean) normalization with natural logs. ACC is
the Hungarian-matched fraction on the contingency table. Silhouette runs the
exact O(n^2) computation on Euclidean distances, with an optional seeded
subsample above a configurable size.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import FeatureMatrix, LabelVector
from .errors import MetricUndefinedError, ShapeError
from .rng import derive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    n: int

    @classmethod
    def from_labels(cls, a: LabelVector, b: LabelVector) -> "ContingencyTable":
        if a.n != b.n:
            raise ShapeError(f"label vectors differ in length: {a.n} vs {b.n}")
        counts = np.zeros((a.num_classes, b.num_classes), dtype=np.int64)
        np.add.at(counts, (a.labels, b.labels), 1)
        return cls(counts=counts, n=a.n)


@dataclass(frozen=True)
class MetricsReport:
    nmi: float
    acc: float
    ari: float
    silhouette: float
    knn_acc: float
    intra_sim: float
    inter_sim: float
    imbalance_ratio: float

    def to_kv(self) -> str:
        return "\n".join(f"{f.name}={format(getattr(self, f.name), '.17g')}" for f in fields(self))

    def to_json(self) -> str:
        return json.dumps(
            {f.name: (None if math.isnan(getattr(self, f.name)) else getattr(self, f.name)) for f in fields(self)},
            sort_keys=True,
        )


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(a: LabelVector, b: LabelVector) -> float:
    """Mutual information over the geometric mean of the entropies."""
    table = ContingencyTable.from_labels(a, b)
    n = table.n
    row = table.counts.sum(axis=1)
    col = table.counts.sum(axis=0)
    h_a = _entropy(row, n)
    h_b = _entropy(col, n)
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    nz = table.counts > 0
    p_ij = table.counts[nz] / n
    outer = np.outer(row, col)[nz] / (n * n)
    mi = float((p_ij * np.log(p_ij / outer)).sum())
    return mi / math.sqrt(h_a * h_b)


def acc(pred: LabelVector, truth: LabelVector) -> float:
    """Clustering accuracy under the best one-to-one cluster-to-class map."""
    table = ContingencyTable.from_labels(pred, truth)
    c = max(table.counts.shape)
    w = np.zeros((c, c), dtype=np.int64)
    w[: table.counts.shape[0], : table.counts.shape[1]] = table.counts
    rows, cols = linear_sum_assignment(-w)
    return float(w[rows, cols].sum()) / table.n


def ari(a: LabelVector, b: LabelVector) -> float:
    """Adjusted Rand index from pair counts; degenerate agreement maps to 1.0."""
    if a.n < 2:
        raise ShapeError("ARI needs at least 2 samples")
    table = ContingencyTable.from_labels(a, b)

    def comb2(x: np.ndarray) -> float:
        x = x.astype(np.float64)
        return float((x * (x - 1) / 2.0).sum())

    index = comb2(table.counts)
    sum_a = comb2(table.counts.sum(axis=1))
    sum_b = comb2(table.counts.sum(axis=0))
    total = table.n * (table.n - 1) / 2.0
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def silhouette(
    features: FeatureMatrix,
    labels: LabelVector,
    max_n: int = 0,
    seed: int = 0,
) -> float:
    """Mean of (b - a)/max(a, b); singleton clusters contribute 0 by convention.

    max_n > 0 caps the computation at a seeded uniform subsample of that size.
    """
    x = features.data
    lbl = labels.labels
    if x.shape[0] != lbl.size:
        raise ShapeError("features and labels disagree on n")
    if 0 < max_n < x.shape[0]:
        keep = np.sort(derive_rng(seed, "silhouette-subsample").choice(x.shape[0], size=max_n, replace=False))
        x = x[keep]
        lbl = lbl[keep]
    n = x.shape[0]
    present = np.unique(lbl)
    if present.size < 2:
        raise MetricUndefinedError("silhouette needs at least 2 clusters")
    if n < 3:
        raise MetricUndefinedError("silhouette needs at least 3 samples")

    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)

    pos_of = np.searchsorted(present, lbl)
    counts = np.array([(lbl == c).sum() for c in present])
    sums = np.stack([dist[:, lbl == c].sum(axis=1) for c in present], axis=1)
    rows = np.arange(n)
    a = sums[rows, pos_of] / np.maximum(counts[pos_of] - 1, 1)
    means = sums / counts
    means[rows, pos_of] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[counts[pos_of] == 1] = 0.0  # singleton convention
    return float(s.mean())


def knn_accuracy(features: FeatureMatrix, labels: LabelVector, k: int) -> float:
    """Mean fraction of each sample's k cosine neighbors sharing its label."""
    x = features.data
    n = x.shape[0]
    if labels.n != n:
        raise ShapeError("features and labels disagree on n")
    if not (1 <= k <= n - 1):
        raise ValueError(f"k must lie in [1, {n - 1}]")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    xn = x / np.where(norms < 1e-12, 1.0, norms)
    sim = xn @ xn.T
    np.fill_diagonal(sim, -np.inf)
    # k-th largest per row as a cut: strictly-above entries are always chosen,
    # entries equal to the cut fill the remaining slots in ascending index
    # order (the documented tie-break)
    cut = -np.partition(-sim, k - 1, axis=1)[:, k - 1 : k]
    above = sim > cut
    at = sim == cut
    need = k - above.sum(axis=1, keepdims=True)
    chosen_at = at & (at.cumsum(axis=1) <= need)
    same = labels.labels[None, :] == labels.labels[:, None]
    share = ((above | chosen_at) & same).sum(axis=1) / k
    return float(share.mean())


def intra_inter_similarity(features: FeatureMatrix, labels: LabelVector) -> tuple[float, float]:
    """Mean cosine over same-label pairs (i<j) and over different-label pairs."""
    x = features.data
    lbl = labels.labels
    if x.shape[0] != lbl.size:
        raise ShapeError("features and labels disagree on n")
    if np.unique(lbl).size < 2:
        raise MetricUndefinedError("need at least 2 clusters")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    xn = x / np.where(norms < 1e-12, 1.0, norms)
    n = x.shape[0]
    # pair sums via class-sum identities: sum_{i<j} x_i.x_j = (||S||^2 - sum ||x_i||^2)/2
    sq = (xn * xn).sum()
    total_sum = (np.linalg.norm(xn.sum(axis=0)) ** 2 - sq) / 2.0
    intra_sum = 0.0
    intra_pairs = 0
    for c in np.unique(lbl):
        members = xn[lbl == c]
        m = members.shape[0]
        intra_sum += (np.linalg.norm(members.sum(axis=0)) ** 2 - (members * members).sum()) / 2.0
        intra_pairs += m * (m - 1) // 2
    if intra_pairs == 0:
        raise MetricUndefinedError("no intra-class pairs exist")
    inter_pairs = n * (n - 1) // 2 - intra_pairs
    return float(intra_sum / intra_pairs), float((total_sum - intra_sum) / inter_pairs)


def imbalance_ratio(labels: LabelVector, num_classes: int | None = None) -> float:
    """Largest class count over smallest nonzero class count."""
    c = num_classes if num_classes is not None else labels.num_classes
    counts = np.bincount(labels.labels, minlength=c)
    nonzero = counts[counts > 0]
    if nonzero.size == 0:
        raise ValueError("no non-empty class")
    if nonzero.size < counts.size:
        logger.warning("imbalance_ratio: %d of %d classes are empty", counts.size - nonzero.size, counts.size)
    return float(nonzero.max()) / float(nonzero.min())


def build_report(
    features: FeatureMatrix,
    pred: LabelVector,
    truth: LabelVector | None,
    knn_k: int = 10,
    silhouette_max_n: int = 0,
    seed: int = 0,
) -> MetricsReport:
    """Assemble the full report on one feature space.

    Agreement metrics (nmi/acc/ari) compare pred against truth and are nan
    without truth. Structure diagnostics use truth labels when available
    (they measure how well the space separates the real classes), falling
    back to pred labels otherwise; imbalance is always of the pred clusters.
    Undefined diagnostics are reported as nan with a logged warning.
    """
    structure = truth if truth is not None else pred
    if truth is not None:
        vals = {"nmi": nmi(pred, truth), "acc": acc(pred, truth), "ari": ari(pred, truth)}
    else:
        vals = {"nmi": math.nan, "acc": math.nan, "ari": math.nan}
    try:
        vals["silhouette"] = silhouette(features, structure, max_n=silhouette_max_n, seed=seed)
    except MetricUndefinedError as exc:
        logger.warning("silhouette undefined: %s", exc)
        vals["silhouette"] = math.nan
    k = min(knn_k, features.n - 1)
    vals["knn_acc"] = knn_accuracy(features, structure, k)
    try:
        vals["intra_sim"], vals["inter_sim"] = intra_inter_similarity(features, structure)
    except MetricUndefinedError as exc:
        logger.warning("intra/inter similarity undefined: %s", exc)
        vals["intra_sim"] = vals["inter_sim"] = math.nan
    vals["imbalance_ratio"] = imbalance_ratio(pred)
    return MetricsReport(**vals)
