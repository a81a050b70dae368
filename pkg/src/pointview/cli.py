"""Command-line interface.

Subcommands::

    prepare-data   build (or synthesize) a dataset tree and its manifest
    pretrain       train one branch standalone, emit a checkpoint
    train          joint training from two branch checkpoints
    eval           classification accuracy or retrieval mAP of a checkpoint
    dump-attention per-shape view attention masks as JSON records

``--config`` points at a JSON file mirroring :class:`TrainConfig`; any flag
given on the command line overrides its config key.  On success the exit
code is 0; on failure a machine-readable error record is printed to stderr
and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .datasets import PRIMITIVES, build_manifest, generate_synthetic, load_manifest
from .training import (
    TrainConfig, dump_attention, evaluate_classification, evaluate_retrieval,
    model_from_checkpoint, pretrain_branch, train_fused,
)

_CONFIG_FLAGS = [
    ("seed", int), ("data_root", str), ("out_dir", str),
    ("n_points", int), ("image_size", int), ("n_views", int), ("n_classes", int),
    ("batch_size", int), ("epochs", int), ("momentum", float),
    ("weight_decay", float), ("lr_fusion", float), ("lr_base", float),
    ("lr_pretrain", float), ("lr_step_factor", float), ("lr_step_interval", int),
    ("freeze_epochs", int), ("k", int), ("mask_mode", str),
    ("view_plan", str), ("view_feature_dim", int), ("point_feature_dim", int),
    ("retrieval_metric", str), ("dropout", float),
]


def _add_config_arguments(parser):
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--preset", choices=["default", "desk"], default=None,
                        help="base config preset before file/flag overrides")
    for name, typ in _CONFIG_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ,
                            dest=name, default=None)


def _resolve_config(args) -> TrainConfig:
    if args.config is not None:
        base = json.loads(Path(args.config).read_text())
    else:
        base = {}
    if args.preset == "desk":
        cfg = TrainConfig.desk(**base)
    else:
        cfg = TrainConfig.from_dict(base)
    overrides = {name: getattr(args, name) for name, _ in _CONFIG_FLAGS
                 if getattr(args, name, None) is not None}
    return cfg.replace(**overrides) if overrides else cfg


def _manifest_for(cfg: TrainConfig):
    manifest_path = Path(cfg.data_root) / "manifest.json"
    if manifest_path.exists():
        return load_manifest(manifest_path)
    return build_manifest(cfg.data_root)


def cmd_prepare_data(args):
    cfg = _resolve_config(args)
    root = Path(args.root or cfg.data_root)
    if args.synthetic:
        classes = args.classes.split(",") if args.classes else list(PRIMITIVES)
        manifest = generate_synthetic(
            root, per_class=args.per_class,
            rng=np.random.default_rng(args.seed if args.seed is not None else cfg.seed),
            classes=classes, n_points=cfg.n_points,
            image_size=max(cfg.image_size, 64),
        )
    else:
        manifest = build_manifest(root)
    manifest.save(root / "manifest.json")
    counts = manifest.counts()
    print(json.dumps({
        "root": str(root),
        "classes": len(manifest.class_table),
        "train": counts.get("train", 0),
        "test": counts.get("test", 0),
        "skipped": len(manifest.skipped),
        "manifest": str(root / "manifest.json"),
    }))
    return 0


def cmd_pretrain(args):
    cfg = _resolve_config(args)
    manifest = _manifest_for(cfg)
    ckpt = pretrain_branch(args.branch, cfg, manifest,
                           progress=_progress if args.verbose else None)
    out = Path(args.out or Path(cfg.out_dir) / f"{args.branch}_pretrain.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(out)
    print(json.dumps({"checkpoint": str(out), "epochs": ckpt.epoch,
                      "final_loss": ckpt.history[-1]["train_loss"]}))
    return 0


def cmd_train(args):
    cfg = _resolve_config(args)
    manifest = _manifest_for(cfg)
    point_ckpt = Checkpoint.load(args.point_ckpt)
    view_ckpt = Checkpoint.load(args.view_ckpt)
    ckpt = train_fused(cfg, point_ckpt, view_ckpt, manifest,
                       progress=_progress if args.verbose else None)
    out = Path(args.out or Path(cfg.out_dir) / "fused.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(out)
    print(json.dumps({"checkpoint": str(out), "epochs": ckpt.epoch,
                      "final_loss": ckpt.history[-1]["train_loss"]}))
    return 0


def cmd_eval(args):
    ckpt = Checkpoint.load(args.ckpt)
    cfg = TrainConfig.from_dict(ckpt.config).replace(
        **{k: v for k, v in {
            "data_root": args.data_root, "retrieval_metric": args.retrieval_metric,
        }.items() if v is not None})
    manifest = _manifest_for(cfg)
    model = model_from_checkpoint(ckpt)
    if args.task == "cls":
        result = evaluate_classification(model, manifest, args.split, cfg)
        print(json.dumps({
            "task": "cls", "split": args.split, "n": result.n,
            "overall_accuracy": result.overall,
            "per_class": {name: acc for name, (_, _, acc) in result.per_class.items()},
        }))
    else:
        result = evaluate_retrieval(model, manifest, args.split, cfg)
        print(json.dumps({
            "task": "retrieval", "split": args.split,
            "mAP": result.mean_ap, "n_queries": result.n_queries,
            "skipped_queries": result.skipped_queries,
        }))
    return 0


def cmd_dump_attention(args):
    ckpt = Checkpoint.load(args.ckpt)
    cfg = TrainConfig.from_dict(ckpt.config)
    if args.data_root is not None:
        cfg = cfg.replace(data_root=args.data_root)
    manifest = _manifest_for(cfg)
    model = model_from_checkpoint(ckpt)
    records = dump_attention(model, manifest, args.split, cfg, args.out,
                             images_dir=args.images)
    print(json.dumps({"out": str(args.out), "shapes": len(records),
                      "mode": records[0]["mode"] if records else None}))
    return 0


def _progress(record):
    print(json.dumps(record), file=sys.stderr)


def build_parser():
    parser = argparse.ArgumentParser(prog="pointview")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="build or synthesize a dataset tree")
    p.add_argument("--root", type=Path, default=None)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--classes", type=str, default=None,
                   help="comma-separated primitive names")
    p.add_argument("--per-class", type=int, default=40)
    _add_config_arguments(p)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("pretrain", help="train one branch standalone")
    p.add_argument("--branch", choices=["point", "view"], required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--verbose", action="store_true")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="joint training from branch checkpoints")
    p.add_argument("--point-ckpt", type=Path, required=True)
    p.add_argument("--view-ckpt", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--verbose", action="store_true")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--task", choices=["cls", "retrieval"], default="cls")
    p.add_argument("--data-root", type=str, default=None)
    p.add_argument("--retrieval-metric", choices=["l2", "cosine"], default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-attention", help="write per-shape attention masks")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--images", type=Path, default=None,
                   help="also write annotated per-shape montages here")
    p.add_argument("--data-root", type=str, default=None)
    p.set_defaults(func=cmd_dump_attention)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
