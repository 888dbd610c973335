"""Flat key=value run configuration.

One file drives every command; keys are section-prefixed (``filter.m=50``),
unknown keys are rejected with the offending key and line, and values are
validated by constructing the owning module's config dataclass at parse time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .data import SynthConfig
from .errors import ConfigError
from .kmeans import KMeansConfig
from .losses import WeightMode
from .selection import FilterConfig
from .trainer import AugmentConfig, TrainerConfig


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in s.split(",") if tok.strip())


def _opt_int(s: str):
    return None if s.lower() in ("none", "") else int(s)


_SCHEMA = {
    "seed": int,
    "synth.c": int,
    "synth.d": int,
    "synth.n_per_class": int,
    "synth.imbalance_ratio": float,
    "synth.per_class": _int_list,
    "synth.mean_separation": float,
    "synth.within_std": float,
    "filter.m": int,
    "filter.fixed_k": _opt_int,
    "filter.retrieval_source": str,
    "kmeans.c": int,
    "kmeans.max_iter": int,
    "kmeans.tol": float,
    "kmeans.n_init": int,
    "trainer.batch_size": int,
    "trainer.base_lr": float,
    "trainer.predictor_lr_mult": float,
    "trainer.ema_momentum": float,
    "trainer.warmup_epochs": int,
    "trainer.boost_epochs": int,
    "trainer.pretrain_epochs": int,
    "trainer.sigma": float,
    "trainer.weight_mode": str,
    "trainer.hidden_dim": int,
    "trainer.feature_dim": int,
    "augment.jitter_std": float,
    "augment.dropout_prob": float,
    "report.knn_k": int,
    "report.silhouette_max_n": int,
}

_DEFAULTS = {
    "seed": 0,
    "synth.c": 10,
    "synth.d": 16,
    "synth.n_per_class": 200,
    "synth.imbalance_ratio": 1.0,
    "synth.per_class": None,
    "synth.mean_separation": 4.0,
    "synth.within_std": 1.0,
    "filter.m": 50,
    "filter.fixed_k": None,
    "filter.retrieval_source": "target_only",
    "kmeans.c": 0,  # 0: infer from truth labels
    "kmeans.max_iter": 300,
    "kmeans.tol": 1e-6,
    "kmeans.n_init": 10,
    "trainer.batch_size": 256,
    "trainer.base_lr": 0.05,
    "trainer.predictor_lr_mult": 10.0,
    "trainer.ema_momentum": 0.996,
    "trainer.warmup_epochs": 10,
    "trainer.boost_epochs": 50,
    "trainer.pretrain_epochs": 40,
    "trainer.sigma": 0.001,
    "trainer.weight_mode": "w_ours_flow",
    "trainer.hidden_dim": 64,
    "trainer.feature_dim": 32,
    "augment.jitter_std": 0.05,
    "augment.dropout_prob": 0.1,
    "report.knn_k": 10,
    "report.silhouette_max_n": 0,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    synth: SynthConfig
    trainer: TrainerConfig

    def with_seed(self, seed: int) -> "RunConfig":
        trainer = replace(self.trainer, seed=seed)
        if trainer.kmeans is not None:
            trainer = replace(trainer, kmeans=replace(trainer.kmeans, seed=seed))
        return RunConfig(seed=seed, synth=replace(self.synth, seed=seed), trainer=trainer)


def _build(values: dict) -> RunConfig:
    seed = values["seed"]
    synth = SynthConfig(
        c=values["synth.c"],
        d=values["synth.d"],
        n_per_class=values["synth.n_per_class"],
        imbalance_ratio=values["synth.imbalance_ratio"],
        per_class=values["synth.per_class"],
        mean_separation=values["synth.mean_separation"],
        within_std=values["synth.within_std"],
        seed=seed,
    )
    filter_cfg = FilterConfig(
        m=values["filter.m"],
        fixed_k=values["filter.fixed_k"],
        retrieval_source=values["filter.retrieval_source"],
    )
    km_kwargs = dict(
        max_iter=values["kmeans.max_iter"],
        tol=values["kmeans.tol"],
        n_init=values["kmeans.n_init"],
        seed=seed,
    )
    if values["kmeans.c"] > 0:
        kmeans_cfg = KMeansConfig(c=values["kmeans.c"], **km_kwargs)
    else:
        KMeansConfig(c=2, **km_kwargs)  # validate the remaining fields now
        kmeans_cfg = None
    try:
        mode = WeightMode(values["trainer.weight_mode"])
    except ValueError:
        raise ConfigError(
            f"trainer.weight_mode must be one of {[m.value for m in WeightMode]}"
        ) from None
    trainer = TrainerConfig(
        batch_size=values["trainer.batch_size"],
        base_lr=values["trainer.base_lr"],
        predictor_lr_mult=values["trainer.predictor_lr_mult"],
        ema_momentum=values["trainer.ema_momentum"],
        warmup_epochs=values["trainer.warmup_epochs"],
        boost_epochs=values["trainer.boost_epochs"],
        pretrain_epochs=values["trainer.pretrain_epochs"],
        sigma=values["trainer.sigma"],
        weight_mode=mode,
        hidden_dim=values["trainer.hidden_dim"],
        feature_dim=values["trainer.feature_dim"],
        filter=filter_cfg,
        kmeans=kmeans_cfg,
        augment=AugmentConfig(
            jitter_std=values["augment.jitter_std"],
            dropout_prob=values["augment.dropout_prob"],
        ),
        knn_k=values["report.knn_k"],
        silhouette_max_n=values["report.silhouette_max_n"],
        seed=seed,
    )
    return RunConfig(seed=seed, synth=synth, trainer=trainer)


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    values = dict(_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _SCHEMA[key](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    try:
        return _build(values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return _build(dict(_DEFAULTS))
    with open(path) as fh:
        return parse_run_config(fh.read(), source=path)
