"""The boosting loop: dual networks with EMA, warm-up, per-epoch pseudo-labels,
per-batch selection + discriminative loss + SGD.

Feature-space augmentation (Gaussian jitter plus coordinate dropout) stands in
for image augmentations: inputs here are embeddings, not pixels. Per batch,
view 1 feeds the online encoder (and, with injected sigma-noise, the
predictor), view 2 feeds the target encoder; the positive/negative terms act
on encoder outputs of the high-confidence subset, the instance term on the
predictor path over the whole batch. The target encoder receives no gradient
and moves only by EMA.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DatasetBundle, FeatureMatrix, LabelVector
from .errors import ConfigError
from .kmeans import KMeansConfig, KMeansModel, assign, kmeans_fit
from .losses import WeightMode, drop_degenerate_groups, group_by_label, total_loss
from .metrics import ContingencyTable, MetricsReport, acc, build_report
from .networks import DualNetworks, backward, ema_update, forward, forward_cached, hash_params, sgd_step
from .rng import derive_rng
from .selection import BatchView, FilterConfig, select

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = [
    "epoch", "l_pos", "l_neg", "l_ins", "l_total",
    "kstar_mean", "xh_frac", "sel_precision",
    "nmi", "acc", "ari", "silhouette", "knn_acc",
]


@dataclass(frozen=True)
class AugmentConfig:
    """Feature-space surrogate for weak augmentations.

    jitter_std is relative to the per-dimension data std supplied at call
    time (absolute when none is supplied).
    """

    jitter_std: float = 0.05
    dropout_prob: float = 0.1

    def __post_init__(self):
        if self.jitter_std < 0:
            raise ConfigError("jitter_std must be >= 0")
        if not (0.0 <= self.dropout_prob < 1.0):
            raise ConfigError("dropout_prob must lie in [0, 1)")


@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 256
    base_lr: float = 0.05
    predictor_lr_mult: float = 10.0
    ema_momentum: float = 0.996
    warmup_epochs: int = 10
    boost_epochs: int = 50
    pretrain_epochs: int = 40
    sigma: float = 0.001
    weight_mode: WeightMode = WeightMode.W_OURS_FLOW
    hidden_dim: int = 64
    feature_dim: int = 32
    filter: FilterConfig = field(default_factory=FilterConfig)
    kmeans: KMeansConfig | None = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    knn_k: int = 10
    silhouette_max_n: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.base_lr < 0 or self.predictor_lr_mult <= 0:
            raise ConfigError("base_lr must be >= 0 and predictor_lr_mult > 0")
        if not (0.0 <= self.ema_momentum <= 1.0):
            raise ConfigError("ema_momentum must lie in [0, 1]")
        if min(self.warmup_epochs, self.boost_epochs, self.pretrain_epochs) < 0:
            raise ConfigError("epoch budgets must be >= 0")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.hidden_dim < 1 or self.feature_dim < 1:
            raise ConfigError("network dims must be >= 1")

    @property
    def effective_lr(self) -> float:
        # linear scaling against the reference batch of 256
        return self.base_lr * self.batch_size / 256


@dataclass(frozen=True)
class BatchRecord:
    n_b: int
    k_star: int
    m_eff: int
    xh_size: int
    count_at_kstar: int
    xh_correct: int = -1  # -1 when truth is unavailable
    batch_correct: int = -1


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    l_pos: float
    l_neg: float
    l_ins: float
    l_total: float
    kstar_mean: float
    xh_frac: float
    sel_precision: float
    report: MetricsReport | None = None
    batches: tuple[BatchRecord, ...] = ()


@dataclass(frozen=True)
class TrainHistory:
    records: tuple[EpochRecord, ...]

    def to_csv(self) -> str:
        lines = [",".join(HISTORY_COLUMNS)]
        for r in self.records:
            rep = r.report
            row = [
                str(r.epoch),
                format(r.l_pos, ".17g"),
                format(r.l_neg, ".17g"),
                format(r.l_ins, ".17g"),
                format(r.l_total, ".17g"),
                format(r.kstar_mean, ".17g"),
                format(r.xh_frac, ".17g"),
                format(r.sel_precision, ".17g"),
            ]
            for name in ("nmi", "acc", "ari", "silhouette", "knn_acc"):
                row.append(format(getattr(rep, name), ".17g") if rep is not None else "nan")
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BoostResult:
    networks: DualNetworks
    history: TrainHistory
    final_labels: LabelVector
    final_model: KMeansModel


def augment(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator, per_dim_std=None) -> np.ndarray:
    """Gaussian jitter then independent coordinate dropout."""
    scale = cfg.jitter_std * (per_dim_std if per_dim_std is not None else 1.0)
    view = x + rng.standard_normal(x.shape) * scale
    return view * (rng.random(x.shape) >= cfg.dropout_prob)


def hungarian_map(pred: LabelVector, truth: LabelVector) -> np.ndarray:
    """Best one-to-one map pred-cluster-id -> truth-class-id (Hungarian)."""
    from scipy.optimize import linear_sum_assignment

    table = ContingencyTable.from_labels(pred, truth)
    c = max(table.counts.shape)
    w = np.zeros((c, c), dtype=np.int64)
    w[: table.counts.shape[0], : table.counts.shape[1]] = table.counts
    rows, cols = linear_sum_assignment(-w)
    mapping = np.zeros(c, dtype=np.int64)
    mapping[rows] = cols
    return mapping[: pred.num_classes]


def _resolve_kmeans(cfg: TrainerConfig, data: DatasetBundle) -> KMeansConfig:
    if cfg.kmeans is not None:
        return cfg.kmeans
    if data.truth is None:
        raise ConfigError("no kmeans config given and no truth labels to infer c from")
    return KMeansConfig(c=data.truth.num_classes, seed=cfg.seed)


def _run_epoch(
    nets: DualNetworks,
    x: np.ndarray,
    cfg: TrainerConfig,
    rng: np.random.Generator,
    per_dim_std: np.ndarray,
    pseudo: np.ndarray | None = None,
    mapped_pseudo: np.ndarray | None = None,
    truth: np.ndarray | None = None,
    num_classes: int = 0,
    instrument: bool = False,
) -> tuple[float, float, float, float, list[BatchRecord]]:
    """One pass of shuffled batches; selection and pos/neg run only with pseudo-labels."""
    n = x.shape[0]
    lr = cfg.effective_lr
    perm = rng.permutation(n)
    sums = np.zeros(4)  # l_pos, l_neg, l_ins, l_total accumulated per batch
    n_batches = 0
    batch_records: list[BatchRecord] = []
    for start in range(0, n, cfg.batch_size):
        idx = perm[start : start + cfg.batch_size]
        n_b = idx.size
        xb = x[idx]
        v1 = augment(xb, cfg.augment, rng, per_dim_std)
        v2 = augment(xb, cfg.augment, rng, per_dim_std)
        z_o, cache_o = forward_cached(nets.online, v1)
        z_t = forward(nets.target, v2)
        noise = cfg.sigma * rng.standard_normal(z_o.shape)
        pred_out, cache_g = forward_cached(nets.predictor, z_o + noise)

        x_h = np.empty(0, dtype=np.int64)
        groups = []
        if pseudo is not None and n_b >= 2:
            labels_b = pseudo[idx]
            view = BatchView(
                indices=idx,
                z_t=FeatureMatrix(z_t, normalized=True),
                z_o=FeatureMatrix(z_o, normalized=True),
                labels=LabelVector(labels_b, num_classes=num_classes),
            )
            sel = select(view, cfg.filter)
            x_h = sel.x_h
            groups = drop_degenerate_groups(
                group_by_label(labels_b[x_h]), z_o[x_h], z_t[x_h]
            )
            rec = BatchRecord(
                n_b=n_b,
                k_star=sel.k_star,
                m_eff=sel.counts.size,
                xh_size=int(x_h.size),
                count_at_kstar=int(sel.counts[sel.k_star - 1]),
            )
            if truth is not None:
                rec = replace(
                    rec,
                    xh_correct=int((mapped_pseudo[idx][x_h] == truth[idx][x_h]).sum()),
                    batch_correct=int((mapped_pseudo[idx] == truth[idx]).sum()),
                )
            batch_records.append(rec)

        lb = total_loss(z_o[x_h], z_t[x_h], pred_out, z_t, groups, cfg.weight_mode)
        grads_g, d_pred_in = backward(nets.predictor, cache_g, lb.grads.d_pred)
        d_z_o = d_pred_in
        if x_h.size:
            d_z_o = d_pred_in.copy()
            d_z_o[x_h] += lb.grads.d_z_o
        grads_o, _ = backward(nets.online, cache_o, d_z_o)

        if instrument:
            before = hash_params(nets.target)
        sgd_step(nets.online, grads_o, lr)
        sgd_step(nets.predictor, grads_g, lr * cfg.predictor_lr_mult)
        if instrument and hash_params(nets.target) != before:
            raise RuntimeError("target parameters changed outside ema_update")
        ema_update(nets.online, nets.target, cfg.ema_momentum)

        sums += (lb.l_pos, lb.l_neg, lb.l_ins, lb.total)
        n_batches += 1
    means = sums / max(n_batches, 1)
    return means[0], means[1], means[2], means[3], batch_records


def _aggregate(epoch: int, means, batches: list[BatchRecord], report: MetricsReport | None) -> EpochRecord:
    l_pos, l_neg, l_ins, l_total = means
    if batches:
        kstar_mean = float(np.mean([b.k_star for b in batches]))
        total = sum(b.n_b for b in batches)
        selected = sum(b.xh_size for b in batches)
        xh_frac = selected / total
        with_truth = [b for b in batches if b.batch_correct >= 0]
        sel_precision = (
            sum(b.xh_correct for b in with_truth) / selected
            if with_truth and selected > 0
            else math.nan
        )
    else:
        kstar_mean = math.nan
        xh_frac = 0.0
        sel_precision = math.nan
    return EpochRecord(
        epoch=epoch,
        l_pos=l_pos,
        l_neg=l_neg,
        l_ins=l_ins,
        l_total=l_total,
        kstar_mean=kstar_mean,
        xh_frac=xh_frac,
        sel_precision=sel_precision,
        report=report,
        batches=tuple(batches),
    )


def train_epoch(
    nets: DualNetworks,
    data: DatasetBundle,
    pseudo: LabelVector,
    cfg: TrainerConfig,
    rng: np.random.Generator,
    instrument: bool = False,
) -> EpochRecord:
    """One selection + loss + SGD epoch against fixed pseudo-labels."""
    x = data.features.data
    mapped = truth = None
    if data.truth is not None:
        mapped = hungarian_map(pseudo, data.truth)[pseudo.labels]
        truth = data.truth.labels
    means = _run_epoch(
        nets, x, cfg, rng, x.std(axis=0),
        pseudo=pseudo.labels, mapped_pseudo=mapped, truth=truth,
        num_classes=pseudo.num_classes, instrument=instrument,
    )
    return _aggregate(0, means[:4], means[4], None)


def warmup(nets: DualNetworks, data: DatasetBundle, cfg: TrainerConfig, rng=None) -> list[float]:
    """Instance-loss-only epochs updating f_o and g, EMA on f_t each step."""
    x = data.features.data
    rng = rng if rng is not None else derive_rng(cfg.seed, "warmup")
    per_epoch = []
    for _ in range(cfg.warmup_epochs):
        means = _run_epoch(nets, x, cfg, rng, x.std(axis=0))
        per_epoch.append(means[2])
    return per_epoch


def pretrain_baseline(data: DatasetBundle, cfg: TrainerConfig) -> DualNetworks:
    """Stand-in for an existing pre-trained clustering model: ins-only training."""
    x = data.features.data
    nets = DualNetworks.create(x.shape[1], cfg.hidden_dim, cfg.feature_dim, derive_rng(cfg.seed, "init"))
    rng = derive_rng(cfg.seed, "pretrain")
    for _ in range(cfg.pretrain_epochs):
        _run_epoch(nets, x, cfg, rng, x.std(axis=0))
    if data.truth is not None:
        km_cfg = _resolve_kmeans(cfg, data)
        z = FeatureMatrix(forward(nets.target, x), normalized=True)
        labels = assign(kmeans_fit(z, km_cfg), z)
        a = acc(labels, data.truth)
        chance = np.bincount(data.truth.labels).max() / data.truth.n
        if not (chance < a < 1.0):
            warnings.warn(
                f"pretrain accuracy {a:.3f} leaves no boosting headroom (chance {chance:.3f})",
                stacklevel=2,
            )
    return nets


def run_boost(
    data: DatasetBundle,
    pretrained: DualNetworks,
    cfg: TrainerConfig,
    instrument: bool = False,
) -> BoostResult:
    """Warm-up, then boost epochs with per-epoch k-means pseudo-labels."""
    nets = pretrained.copy()
    x = data.features.data
    per_dim_std = x.std(axis=0)
    km_cfg = _resolve_kmeans(cfg, data)
    rng = derive_rng(cfg.seed, "boost")
    truth = data.truth.labels if data.truth is not None else None

    def label_now() -> tuple[FeatureMatrix, KMeansModel, LabelVector]:
        z = FeatureMatrix(forward(nets.target, x), normalized=True)
        model = kmeans_fit(z, km_cfg)
        return z, model, assign(model, z)

    def report_for(z: FeatureMatrix, labels: LabelVector) -> MetricsReport:
        return build_report(
            z, labels, data.truth,
            knn_k=min(cfg.knn_k, data.n - 1),
            silhouette_max_n=cfg.silhouette_max_n,
            seed=cfg.seed,
        )

    records = []
    epoch = 0
    pseudo = model = None
    for _ in range(cfg.warmup_epochs):
        means = _run_epoch(nets, x, cfg, rng, per_dim_std, instrument=instrument)
        z, model, pseudo = label_now()
        records.append(_aggregate(epoch, means[:4], means[4], report_for(z, pseudo)))
        epoch += 1
    if pseudo is None:
        z, model, pseudo = label_now()
    for _ in range(cfg.boost_epochs):
        mapped = hungarian_map(pseudo, data.truth)[pseudo.labels] if truth is not None else None
        means = _run_epoch(
            nets, x, cfg, rng, per_dim_std,
            pseudo=pseudo.labels, mapped_pseudo=mapped, truth=truth,
            num_classes=pseudo.num_classes, instrument=instrument,
        )
        z, model, pseudo = label_now()
        records.append(_aggregate(epoch, means[:4], means[4], report_for(z, pseudo)))
        epoch += 1

    return BoostResult(
        networks=nets,
        history=TrainHistory(tuple(records)),
        final_labels=pseudo,
        final_model=model,
    )
