"""Dataset representation, file I/O, and synthetic Gaussian-mixture generation.

Two on-disk formats are supported:

* DCBF (binary, bit-exact round trip): magic ``b"DCBF"``, u32 LE version (=1),
  u64 LE sample count n, u32 LE dimension d, u8 has_truth, u8 has_pseudo,
  followed by n*d LE f64 features (row-major), then n LE i32 truth labels if
  flagged, then n LE i32 pseudo labels if flagged.
* CSV (text, exact to 17 significant digits): optional header, d numeric
  columns, optional trailing integer column named ``label``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, ZeroVectorError
from .rng import derive_rng

_DCBF_MAGIC = b"DCBF"
_DCBF_VERSION = 1
_DCBF_HEADER = struct.Struct("<4sIQIBB")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense n-by-d matrix of embeddings; immutable after construction."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"feature matrix must be 2-d with n,d >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature matrix contains non-finite values")
        if self.normalized:
            norms = np.linalg.norm(arr, axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-6):
                raise ValueError("normalized=True but some row norm differs from 1 by more than 1e-6")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelVector:
    """Integer class id per sample; ids live in [0, num_classes)."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int64)
        if arr.ndim != 1 or arr.size < 1:
            raise ShapeError("labels must be a non-empty 1-d array")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if arr.min() < 0 or arr.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "labels", _frozen(arr))

    @property
    def n(self) -> int:
        return self.labels.size


@dataclass(frozen=True)
class DatasetBundle:
    """Features plus optional truth/pseudo labels, all agreeing on n."""

    features: FeatureMatrix
    truth: LabelVector | None = None
    pseudo: LabelVector | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        n = self.features.n
        for name in ("truth", "pseudo"):
            lv = getattr(self, name)
            if lv is not None and lv.n != n:
                raise ShapeError(f"{name} labels have {lv.n} entries for {n} samples")
        ids = self.ids if self.ids is not None else np.arange(n, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape != (n,):
            raise ShapeError("ids must have one entry per sample")
        object.__setattr__(self, "ids", _frozen(ids))

    @property
    def n(self) -> int:
        return self.features.n


@dataclass(frozen=True)
class SynthConfig:
    """Gaussian-mixture generator settings.

    Class sizes come from ``per_class`` when given; otherwise class j gets
    ``round(n_per_class * imbalance_ratio**(-j/(c-1)))`` samples, i.e. a
    geometric decay from a head class of n_per_class down to a tail class of
    n_per_class/imbalance_ratio. Cluster means are drawn isotropically and
    rescaled so their minimum pairwise distance equals mean_separation.
    """

    c: int
    d: int
    n_per_class: int = 200
    imbalance_ratio: float = 1.0
    per_class: tuple[int, ...] | None = None
    mean_separation: float = 4.0
    within_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.c < 2:
            raise ConfigError("c must be >= 2")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.imbalance_ratio < 1.0:
            raise ConfigError("imbalance_ratio must be >= 1")
        if self.mean_separation <= 0:
            raise ConfigError("mean_separation must be > 0")
        if self.within_std <= 0:
            raise ConfigError("within_std must be > 0")
        if self.per_class is not None and len(self.per_class) != self.c:
            raise ConfigError("per_class must list one size per class")

    def class_sizes(self) -> np.ndarray:
        if self.per_class is not None:
            sizes = np.asarray(self.per_class, dtype=np.int64)
        elif self.imbalance_ratio == 1.0:
            sizes = np.full(self.c, self.n_per_class, dtype=np.int64)
        else:
            j = np.arange(self.c)
            decay = self.imbalance_ratio ** (-j / (self.c - 1))
            sizes = np.rint(self.n_per_class * decay).astype(np.int64)
        if np.any(sizes < 2):
            raise ConfigError(f"every class needs >= 2 samples, got sizes {sizes.tolist()}")
        return sizes


def l2_normalize(m: FeatureMatrix) -> FeatureMatrix:
    """Divide each row by its Euclidean norm; input is left untouched."""
    norms = np.linalg.norm(m.data, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        bad = int(np.argmin(norms))
        raise ZeroVectorError(f"row {bad} has norm {float(norms[bad, 0]):.3e}; cannot normalize")
    return FeatureMatrix(m.data / norms, normalized=True)


def generate_gaussian_mixture(cfg: SynthConfig) -> DatasetBundle:
    """c isotropic Gaussian clusters with minimum mean distance = mean_separation."""
    sizes = cfg.class_sizes()
    rng = derive_rng(cfg.seed, "synth")

    means = rng.standard_normal((cfg.c, cfg.d))
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    min_dist = dist[~np.eye(cfg.c, dtype=bool)].min()
    while min_dist <= 0:  # astronomically unlikely duplicate draw
        means = rng.standard_normal((cfg.c, cfg.d))
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        min_dist = dist[~np.eye(cfg.c, dtype=bool)].min()
    means *= cfg.mean_separation / min_dist

    n = int(sizes.sum())
    X = np.empty((n, cfg.d))
    labels = np.empty(n, dtype=np.int64)
    row = 0
    for j, size in enumerate(sizes):
        X[row : row + size] = means[j] + cfg.within_std * rng.standard_normal((size, cfg.d))
        labels[row : row + size] = j
        row += size

    return DatasetBundle(
        features=FeatureMatrix(X),
        truth=LabelVector(labels, num_classes=cfg.c),
    )


def save_dataset(bundle: DatasetBundle, path: str, format: str = "dcbf") -> None:
    if format == "dcbf":
        _save_dcbf(bundle, path)
    elif format == "csv":
        _save_csv(bundle, path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")


def load_dataset(path: str, format: str = "dcbf") -> DatasetBundle:
    if format == "dcbf":
        return _load_dcbf(path)
    if format == "csv":
        return _load_csv(path)
    raise ConfigError(f"unknown dataset format {format!r}")


def _save_dcbf(bundle: DatasetBundle, path: str) -> None:
    feats = bundle.features
    header = _DCBF_HEADER.pack(
        _DCBF_MAGIC,
        _DCBF_VERSION,
        feats.n,
        feats.d,
        bundle.truth is not None,
        bundle.pseudo is not None,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(feats.data.astype("<f8", copy=False).tobytes())
        if bundle.truth is not None:
            fh.write(bundle.truth.labels.astype("<i4").tobytes())
        if bundle.pseudo is not None:
            fh.write(bundle.pseudo.labels.astype("<i4").tobytes())


def _load_dcbf(path: str) -> DatasetBundle:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _DCBF_HEADER.size:
        raise FormatError("file too short for a DCBF header")
    magic, version, n, d, has_truth, has_pseudo = _DCBF_HEADER.unpack_from(raw)
    if magic != _DCBF_MAGIC:
        raise FormatError(f"bad magic {magic!r}; expected {_DCBF_MAGIC!r}")
    if version != _DCBF_VERSION:
        raise FormatError(f"unsupported DCBF version {version}")
    off = _DCBF_HEADER.size
    want = off + 8 * n * d + 4 * n * (bool(has_truth) + bool(has_pseudo))
    if len(raw) != want:
        raise ShapeError(f"DCBF payload is {len(raw)} bytes, header implies {want}")
    feats = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    if not np.all(np.isfinite(feats)):
        raise ValueError("DCBF features contain non-finite values")
    off += 8 * n * d
    truth = pseudo = None
    if has_truth:
        t = np.frombuffer(raw, dtype="<i4", count=n, offset=off).astype(np.int64)
        truth = LabelVector(t, num_classes=int(t.max()) + 1)
        off += 4 * n
    if has_pseudo:
        p = np.frombuffer(raw, dtype="<i4", count=n, offset=off).astype(np.int64)
        pseudo = LabelVector(p, num_classes=int(p.max()) + 1)
    return DatasetBundle(features=FeatureMatrix(feats.copy()), truth=truth, pseudo=pseudo)


def _save_csv(bundle: DatasetBundle, path: str) -> None:
    feats = bundle.features
    with_label = bundle.truth is not None
    cols = [f"f{j}" for j in range(feats.d)]
    if with_label:
        cols.append("label")
    lines = [",".join(cols)]
    for i in range(feats.n):
        row = [format(v, ".17g") for v in feats.data[i]]
        if with_label:
            row.append(str(int(bundle.truth.labels[i])))
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _load_csv(path: str) -> DatasetBundle:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise FormatError("empty CSV file")
    first = lines[0].split(",")
    has_header = not all(_is_number(tok) for tok in first)
    label_col = has_header and first[-1].strip() == "label"
    rows = lines[1:] if has_header else lines
    if not rows:
        raise FormatError("CSV has a header but no data rows")
    width = len(rows[0].split(","))
    data = np.empty((len(rows), width))
    for i, ln in enumerate(rows):
        toks = ln.split(",")
        if len(toks) != width:
            raise ShapeError(f"row {i} has {len(toks)} columns, expected {width}")
        try:
            data[i] = [float(t) for t in toks]
        except ValueError as exc:
            raise FormatError(f"row {i}: {exc}") from exc
    if not np.all(np.isfinite(data)):
        raise ValueError("CSV contains non-finite values")
    truth = None
    if label_col:
        labels = data[:, -1]
        if not np.all(labels == np.rint(labels)):
            raise FormatError("label column must hold integers")
        labels = labels.astype(np.int64)
        truth = LabelVector(labels, num_classes=int(labels.max()) + 1)
        data = data[:, :-1]
    return DatasetBundle(features=FeatureMatrix(data), truth=truth)
