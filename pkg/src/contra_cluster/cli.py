"""Command-line entry point: train, evaluate, visualize, inspect-checkpoint.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .cluster import hard_label
from .evaluate import (
    MemoryBank,
    compute_metrics,
    fit_cluster_label_map,
    knn_predict,
    linear_probe,
    predict_stat,
)
from .nncore import load_checkpoint, no_grad, read_manifest
from .pipeline import TrainConfig, encode_all, restore_model, run_training, stream
from .plots import export_plots, save_tiles
from .tsne import tsne_embed

log = logging.getLogger("contra_cluster")

METHODS = ("stat", "knn", "lin")
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
TSNE_STREAM, PROBE_STREAM, SUBSET_STREAM = 10, 11, 12


class ConfigError(ValueError):
    pass


@dataclass
class EvalOptions:
    methods: list = field(default_factory=lambda: list(METHODS))
    probe_fraction: float = 0.2
    label_fraction: float = 1.0
    k_neighbors: int = 5
    probe_epochs: int = 200
    probe_lr: float = 3e-4
    probe_on: str = "z"
    splits: list = field(default_factory=lambda: ["test"])
    tsne_perplexity: float = 30.0
    tsne_iters: int = 1000
    tsne_max_points: int = 2000


@dataclass
class RunConfig:
    dataset: dict
    train: TrainConfig
    eval: EvalOptions
    output_dir: str
    name: str = "contrastive-autoencoder"

    def to_dict(self):
        t = self.train.to_dict()
        t.pop("checkpoint_dir")
        return {
            "name": self.name,
            "dataset": self.dataset,
            "train": t,
            "eval": vars(self.eval),
            "output_dir": self.output_dir,
        }


def _dataset_paths(ds):
    fmt = ds.get("format")
    if fmt == "idx":
        keys = [k for k in ds if k.endswith("_images") or k.endswith("_labels")]
        return [ds[k] for k in keys]
    if fmt == "npz":
        return [ds["path"]] if "path" in ds else []
    raise ConfigError(f"dataset.format must be 'idx' or 'npz', got {fmt!r}")


def build_run_config(raw, overrides):
    """Validate a config dict and apply command-line overrides."""
    if "dataset" not in raw:
        raise ConfigError("config lacks a 'dataset' section")
    ds = dict(raw["dataset"])
    paths = _dataset_paths(ds)
    if ds["format"] == "idx" and not ({"train_images", "train_labels"} <= set(ds)):
        raise ConfigError("idx dataset needs train_images and train_labels")
    if ds["format"] == "npz" and "path" not in ds:
        raise ConfigError("npz dataset needs a path")
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise ConfigError(f"dataset files not found: {missing}")
    out = overrides.get("out") or raw.get("output_dir") or "runs/default"
    train_raw = dict(raw.get("train", {}))
    if overrides.get("seed") is not None:
        train_raw["seed"] = overrides["seed"]
    train_raw["checkpoint_dir"] = os.path.join(out, "checkpoints")
    try:
        train = TrainConfig.from_dict(train_raw)
        ev = EvalOptions(**raw.get("eval", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if overrides.get("methods"):
        ev.methods = [m.strip() for m in overrides["methods"].split(",") if m.strip()]
    if overrides.get("split"):
        ev.splits = [s.strip() for s in overrides["split"].split(",") if s.strip()]
    if not ev.methods:
        raise ConfigError("method list is empty")
    unknown = sorted(set(ev.methods) - set(METHODS))
    if unknown:
        raise ConfigError(f"unknown evaluation methods {unknown}; choose from {list(METHODS)}")
    bad = sorted(set(ev.splits) - set(data_mod.SPLITS))
    if bad:
        raise ConfigError(f"unknown splits {bad}")
    if ev.probe_on not in ("z", "h"):
        raise ConfigError("eval.probe_on must be 'z' or 'h'")
    return RunConfig(ds, train, ev, out, raw.get("name", "contrastive-autoencoder"))


def load_split(ds_cfg, split):
    """Load one split as described by the dataset section (with optional size limits)."""
    cc = ds_cfg.get("class_count")
    if ds_cfg["format"] == "idx":
        ik, lk = f"{split}_images", f"{split}_labels"
        if ik not in ds_cfg or lk not in ds_cfg:
            raise ConfigError(f"dataset has no {split} split")
        ds = data_mod.load_idx(ds_cfg[ik], ds_cfg[lk], split=split, class_count=cc)
    else:
        try:
            ds = data_mod.load_medmnist_npz(ds_cfg["path"], split, class_count=cc)
        except data_mod.DataFormatError as exc:
            raise ConfigError(str(exc)) from exc
    limit = ds_cfg.get("train_limit" if split == "train" else "eval_limit")
    return data_mod.head(ds, limit)


def _read_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _thread_limit():
    n = os.environ.get("CONTRA_CLUSTER_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def _write_json(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands ------------------------------------------------------------

def cmd_train(args):
    rc = build_run_config(_read_config(args.config), vars(args))
    if args.resume and not os.path.exists(args.resume):
        raise ConfigError(f"resume checkpoint {args.resume} not found")
    train = load_split(rc.dataset, "train")
    os.makedirs(rc.output_dir, exist_ok=True)
    _write_json(os.path.join(rc.output_dir, "resolved_config.json"), rc.to_dict())
    art = run_training(rc.train, train, resume_from=args.resume)
    summary = {
        "checkpoint": art.checkpoint_path,
        "checkpoints": art.checkpoints,
        "k": art.prototypes.k if art.prototypes is not None else None,
        "elbow_curve": {str(k): v for k, v in art.elbow_curve.items()},
        "epochs": len(art.loss_log),
    }
    _write_json(os.path.join(rc.output_dir, "train_summary.json"), summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def features(model, images):
    """Latent codes h and projections z for a batch of images."""
    h = encode_all(model.encoder, images)
    with no_grad():
        z = model.projector(h).data
    return h, z


def evaluate_run(model, protos, train, splits, ev, seed, dataset_name="dataset", model_name="contrastive-autoencoder"):
    """Run the requested protocols; returns a list of metric report dicts."""
    if "stat" in ev.methods and protos is None:
        raise ConfigError("checkpoint has no prototypes; 'stat' needs a post-warmup checkpoint")
    class_count = train.class_count
    labelled = train if ev.label_fraction >= 1.0 else data_mod.subset(train, ev.label_fraction, seed)
    h_tr, z_tr = features(model, labelled.images)
    reports = []
    label_map = fit_cluster_label_map(h_tr, labelled.labels, protos) if "stat" in ev.methods else None
    bank = MemoryBank(h_tr, labelled.labels, ev.k_neighbors) if "knn" in ev.methods else None
    probe = None
    if "lin" in ev.methods:
        sub = data_mod.subset(train, ev.probe_fraction, int(stream(seed, PROBE_STREAM).integers(2**31)))
        h_sub, z_sub = features(model, sub.images)
        probe, _ = linear_probe(
            z_sub if ev.probe_on == "z" else h_sub, sub.labels, class_count, epochs=ev.probe_epochs, lr=ev.probe_lr, seed=seed
        )
    for split_name, ds in splits.items():
        h, z = features(model, ds.images)
        for method in ev.methods:
            if method == "stat":
                pred = predict_stat(h, protos, label_map)
            elif method == "knn":
                pred = knn_predict(bank, h)
            else:
                pred = probe.predict(z if ev.probe_on == "z" else h)
            m = compute_metrics(pred, ds.labels, class_count)
            rep = {"model": model_name, "dataset": dataset_name, "split": split_name, "method": method, **m.to_dict()}
            if method == "lin":
                rep["probe_features"] = ev.probe_on
            reports.append(rep)
    return reports


def _load_model(path):
    tensors, meta = load_checkpoint(path)
    model, protos = restore_model(tensors, meta)
    return model, protos, meta


def cmd_evaluate(args):
    rc = build_run_config(_read_config(args.config), vars(args))
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint {args.checkpoint} not found")
    model, protos, meta = _load_model(args.checkpoint)
    if "stat" in rc.eval.methods and protos is None:
        raise ConfigError("checkpoint has no prototypes; 'stat' needs a post-warmup checkpoint")
    train = load_split(rc.dataset, "train")
    splits = {s: load_split(rc.dataset, s) for s in rc.eval.splits}
    reports = evaluate_run(
        model, protos, train, splits, rc.eval, rc.train.seed, rc.dataset.get("name", rc.dataset["format"]), rc.name
    )
    out = os.path.join(rc.output_dir, "metrics.json")
    _write_json(out, reports)
    print(json.dumps(reports, indent=2))
    return EXIT_OK


def prototype_reconstructions(model, protos):
    """Decode each prototype conditioned on its own one-hot assignment; (k, H, W)."""
    with no_grad():
        y = model.cond_decoder(protos.centroids.astype(np.float32), np.eye(protos.k, dtype=np.float32))
    return y.data[:, 0]


def cmd_visualize(args):
    rc = build_run_config(_read_config(args.config), vars(args))
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint {args.checkpoint} not found")
    model, protos, meta = _load_model(args.checkpoint)
    if protos is None:
        raise ConfigError("checkpoint has no prototypes; visualize needs a post-warmup checkpoint")
    split = rc.eval.splits[0]
    ds = load_split(rc.dataset, split)
    if len(ds) > rc.eval.tsne_max_points:
        ds = data_mod.subset(ds, rc.eval.tsne_max_points / len(ds), rc.train.seed)
    train = load_split(rc.dataset, "train")
    h_tr, _ = features(model, train.images)
    label_map = fit_cluster_label_map(h_tr, train.labels, protos)
    h, _ = features(model, ds.images)
    clusters = hard_label(h, protos)
    seed = int(stream(rc.train.seed, TSNE_STREAM).integers(2**31))
    coords = tsne_embed(h, perplexity=rc.eval.tsne_perplexity, iters=rc.eval.tsne_iters, seed=seed).embedding
    out_dir = os.path.join(rc.output_dir, "plots")
    paths = export_plots(coords, ds.labels, clusters, out_dir, mapped_labels=label_map.lookup(clusters), prefix=f"{split}_")
    tiles = prototype_reconstructions(model, protos)
    paths["prototypes"] = save_tiles(tiles, os.path.join(out_dir, "prototypes.png"))
    np.save(os.path.join(out_dir, "prototypes.npy"), tiles)
    print(json.dumps(paths, indent=2))
    return EXIT_OK


def cmd_inspect(args):
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint {args.checkpoint} not found")
    manifest, _ = read_manifest(args.checkpoint)
    meta = manifest["meta"]
    summary = {
        "next_epoch": meta.get("next_epoch"),
        "phase": meta.get("phase"),
        "k": meta.get("k"),
        "kernel_backend": meta.get("kernel_backend"),
        "tensors": {e["name"]: e["shape"] for e in manifest["tensors"]},
        "elbow_curve": meta.get("elbow_curve"),
        "config": meta.get("config"),
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="contra-cluster", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run both training phases")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="stat / kNN / linear-probe metrics")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--methods", help="comma-separated subset of stat,knn,lin")
    e.add_argument("--split", help="comma-separated evaluation splits")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("visualize", help="t-SNE plots and prototype reconstructions")
    v.add_argument("--config", required=True)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--split")
    v.add_argument("--seed", type=int)
    v.add_argument("--out")
    v.set_defaults(func=cmd_visualize, methods=None)

    i = sub.add_parser("inspect-checkpoint", help="print a checkpoint manifest summary")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s: %(message)s"
    )
    try:
        with _thread_limit():
            return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 1
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
