"""Command-line harness: synth, select, boost, eval.

Every command is a pure function of (input files, config, seed), so reruns
produce byte-identical primary outputs.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_run_config
from .data import DatasetBundle, FeatureMatrix, LabelVector, generate_gaussian_mixture, l2_normalize, load_dataset, save_dataset
from .errors import ConfigError, DCBoostError
from .kmeans import KMeansConfig, assign, kmeans_fit
from .metrics import build_report
from .networks import forward, load_networks, save_networks
from .rng import derive_rng
from .selection import BatchView, select
from .trainer import hungarian_map, pretrain_baseline, run_boost


class _WarningCounter(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.count = 0

    def emit(self, record):
        self.count += 1


def _load(path: str, fmt: str) -> DatasetBundle:
    return load_dataset(path, format=fmt)


def cmd_synth(config: RunConfig, out_path: str, fmt: str) -> int:
    bundle = generate_gaussian_mixture(config.synth)
    save_dataset(bundle, out_path, format=fmt)
    print(f"wrote {bundle.n} samples x {bundle.features.d} dims to {out_path}")
    return 0


def cmd_select(config: RunConfig, dataset_path: str, fmt: str, out_dir: str | None, run_kmeans: bool) -> int:
    bundle = _load(dataset_path, fmt)
    feats = l2_normalize(bundle.features)
    tcfg = config.trainer
    if bundle.pseudo is not None and not run_kmeans:
        pseudo = bundle.pseudo
    elif run_kmeans:
        km = tcfg.kmeans
        if km is None:
            if bundle.truth is None:
                raise ConfigError("kmeans.c is required when the dataset has no truth labels")
            km = KMeansConfig(c=bundle.truth.num_classes, seed=config.seed)
        pseudo = assign(kmeans_fit(feats, km), feats)
    else:
        raise ConfigError("dataset has no pseudo labels; pass --kmeans to generate them")

    mapped = None
    if bundle.truth is not None:
        mapped = hungarian_map(pseudo, bundle.truth)[pseudo.labels]

    rng = derive_rng(config.seed, "select")
    perm = rng.permutation(bundle.n)
    score_rows = ["batch,k,count,score"]
    kstar_hist: dict[int, int] = {}
    total = selected = sel_correct = 0
    for b, start in enumerate(range(0, bundle.n, tcfg.batch_size)):
        idx = perm[start : start + tcfg.batch_size]
        if idx.size < 2:
            continue
        view = BatchView(
            indices=idx,
            z_t=FeatureMatrix(feats.data[idx], normalized=True),
            z_o=FeatureMatrix(feats.data[idx], normalized=True),
            labels=LabelVector(pseudo.labels[idx], num_classes=pseudo.num_classes),
        )
        res = select(view, tcfg.filter)
        for pos, (cnt, sc) in enumerate(zip(res.counts, res.scores), start=1):
            score_rows.append(f"{b},{pos},{cnt},{format(sc, '.17g')}")
        kstar_hist[res.k_star] = kstar_hist.get(res.k_star, 0) + 1
        total += idx.size
        selected += res.x_h.size
        if mapped is not None:
            sel_correct += int((mapped[idx][res.x_h] == bundle.truth.labels[idx][res.x_h]).sum())

    frac = selected / total if total else 0.0
    precision = sel_correct / selected if (mapped is not None and selected) else math.nan
    summary = [
        f"batches={len(kstar_hist) and sum(kstar_hist.values())}",
        "kstar_histogram=" + ";".join(f"{k}:{v}" for k, v in sorted(kstar_hist.items())),
        f"xh_frac={format(frac, '.17g')}",
        f"sel_precision={format(precision, '.17g')}",
    ]
    text = "\n".join(summary)
    print(text)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.csv").write_text("\n".join(score_rows) + "\n")
        (out / "summary.txt").write_text(text + "\n")
    return 0


def cmd_boost(config: RunConfig, dataset_path: str, fmt: str, out_dir: str, checkpoint: str | None) -> int:
    bundle = _load(dataset_path, fmt)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if checkpoint is not None:
        pretrained = load_networks(checkpoint)
    else:
        pretrained = pretrain_baseline(bundle, config.trainer)
    save_networks(pretrained, str(out / "pretrained.dcbm"))
    result = run_boost(bundle, pretrained, config.trainer)
    save_networks(result.networks, str(out / "boosted.dcbm"))
    (out / "history.csv").write_text(result.history.to_csv())
    (out / "final_labels.csv").write_text(
        "\n".join(str(int(v)) for v in result.final_labels.labels) + "\n"
    )
    last = result.history.records[-1].report if result.history.records else None
    if last is not None:
        print(last.to_kv())
    return 0


def _read_labels_file(path: str) -> LabelVector:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if lines and lines[0] == "label":
        lines = lines[1:]
    labels = np.array([int(ln) for ln in lines], dtype=np.int64)
    return LabelVector(labels, num_classes=int(labels.max()) + 1)


def cmd_eval(
    config: RunConfig,
    dataset_path: str,
    fmt: str,
    labels_path: str | None,
    checkpoint: str | None,
    json_path: str | None,
    export_path: str | None,
) -> int:
    bundle = _load(dataset_path, fmt)
    if checkpoint is not None:
        nets = load_networks(checkpoint)
        feats = FeatureMatrix(forward(nets.target, bundle.features.data), normalized=True)
        km = config.trainer.kmeans
        if km is None:
            if bundle.truth is None:
                raise ConfigError("kmeans.c is required when the dataset has no truth labels")
            km = KMeansConfig(c=bundle.truth.num_classes, seed=config.seed)
        labels = assign(kmeans_fit(feats, km), feats)
    else:
        feats = l2_normalize(bundle.features)
        if labels_path is not None:
            labels = _read_labels_file(labels_path)
        elif bundle.pseudo is not None:
            labels = bundle.pseudo
        else:
            raise ConfigError("pass --labels or --checkpoint, or store pseudo labels in the dataset")
    if labels.n != bundle.n:
        raise ConfigError(f"got {labels.n} labels for {bundle.n} samples")

    counter = _WarningCounter()
    logging.getLogger("dcboost").addHandler(counter)
    try:
        report = build_report(
            feats,
            labels,
            bundle.truth,
            knn_k=min(config.trainer.knn_k, bundle.n - 1),
            silhouette_max_n=config.trainer.silhouette_max_n,
            seed=config.seed,
        )
    finally:
        logging.getLogger("dcboost").removeHandler(counter)
    print(report.to_kv())
    print(f"warnings={counter.count}")
    if json_path is not None:
        Path(json_path).write_text(report.to_json() + "\n")
    if export_path is not None:
        header = ",".join(f"f{j}" for j in range(feats.d))
        rows = [header]
        rows += [",".join(format(v, ".17g") for v in row) for row in feats.data]
        Path(export_path).write_text("\n".join(rows) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcboost", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        if dataset:
            p.add_argument("dataset", help="input dataset file")
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--format", choices=("dcbf", "csv"), default="dcbf")

    p_synth = sub.add_parser("synth", help="generate a Gaussian-mixture dataset")
    common(p_synth, dataset=False)
    p_synth.add_argument("--out", required=True, help="output dataset path")

    p_select = sub.add_parser("select", help="run adaptive k-NN selection over batches")
    common(p_select)
    p_select.add_argument("--out", default=None, help="directory for scores.csv and summary.txt")
    p_select.add_argument("--kmeans", action="store_true", help="compute pseudo labels by k-means first")

    p_boost = sub.add_parser("boost", help="pretrain (or load) and run the boosting loop")
    common(p_boost)
    p_boost.add_argument("--out", required=True, help="output directory")
    p_boost.add_argument("--checkpoint", default=None, help="skip pretraining, load this DCBM file")

    p_eval = sub.add_parser("eval", help="compute the metrics report")
    common(p_eval)
    p_eval.add_argument("--labels", default=None, help="label file, one integer per line")
    p_eval.add_argument("--checkpoint", default=None, help="DCBM checkpoint to embed and cluster")
    p_eval.add_argument("--json", default=None, help="also write the report as JSON")
    p_eval.add_argument("--export-embeddings", default=None, help="write evaluated features as CSV")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        if args.command == "synth":
            return cmd_synth(config, args.out, args.format)
        if args.command == "select":
            return cmd_select(config, args.dataset, args.format, args.out, args.kmeans)
        if args.command == "boost":
            return cmd_boost(config, args.dataset, args.format, args.out, args.checkpoint)
        if args.command == "eval":
            return cmd_eval(
                config, args.dataset, args.format,
                args.labels, args.checkpoint, args.json, getattr(args, "export_embeddings"),
            )
        raise ConfigError(f"unknown command {args.command!r}")
    except (DCBoostError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
