"""Command-line entry points.

    maskclr synth     generate a synthetic directory-per-class dataset
    maskclr train     train on a dataset, write checkpoints + history
    maskclr evaluate  cluster a checkpoint's embeddings, score NMI/AMI/ARI
    maskclr embed     export embeddings (CSV or binary)
    maskclr gmm       within-class mixture fit + outlier report + 3-D projection
    maskclr export    convert an embeddings file between CSV and binary

Report-producing commands render a matplotlib figure next to each
delimited output unless --no-figures is given. On failure every command
prints one line, ``error: <category>: <message>``, and exits nonzero.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from .configio import (
    config_hash,
    flat_to_train_config,
    format_config,
    parse_config_text,
    read_config_file,
    train_config_to_flat,
)
from .data import SyntheticSpec, ingest, load_dataset, synth_gen
from .errors import ConfigurationError, MaskclrError
from .evaluation import embed_dataset, score_embeddings
from .mixture import detect_outliers, gmm_assign, gmm_fit, select_dims
from .model import load_checkpoint
from .train import train

CONFIG_ENV_VAR = "MASKCLR_CONFIG"


def _require(value, what):
    if value is None:
        raise ConfigurationError(f"{what} is required")
    return value


def _require_file(path, what):
    _require(path, what)
    if not os.path.isfile(path):
        raise ConfigurationError(f"{what} not found: {path}")
    return path


def _load_model(path):
    model, _, meta = load_checkpoint(_require_file(path, "checkpoint"))
    with open(path) as fh:
        import json

        cid = json.load(fh).get("checkpoint_id", "")
    return model, meta, cid


def _ingest_dataset(root, min_hw):
    manifest = ingest(_require(root, "dataset root"), min_size=min_hw)
    for rej in manifest.rejects:
        print(f"reject: {rej.path}: {rej.reason}", file=sys.stderr)
    return load_dataset(manifest)


def cmd_synth(args):
    spec = SyntheticSpec(
        classes=args.classes,
        per_class=args.per_class,
        image_size=(args.height, args.width),
        noise_level=args.noise,
        outlier_fraction=args.outlier_fraction,
        seed=args.seed,
    )
    manifest = synth_gen(spec, _require(args.out, "--out"))
    total = sum(manifest.counts)
    print(f"wrote {total} images in {len(manifest.class_names)} classes under {args.out}")
    print(f"checksum: {manifest.checksum}")
    return 0


def _resolve_train_config(args):
    flat = {}
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if config_path:
        flat.update(read_config_file(_require_file(config_path, "config file")))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got '{item}'")
        flat.update(parse_config_text(item))
    return flat


def cmd_train(args):
    flat = _resolve_train_config(args)
    dataset = None
    if "classes" not in flat:
        dataset = _ingest_dataset(args.data, (flat.get("crop_size", 32),) * 2)
        flat["classes"] = dataset.n_classes
    cfg = flat_to_train_config(flat)
    if dataset is None:
        dataset = _ingest_dataset(args.data, (cfg.augment.crop_size,) * 2)

    out_dir = _require(args.out, "--out")
    os.makedirs(out_dir, exist_ok=True)
    result = train(dataset, cfg, out_dir=out_dir, resume_from=args.resume)

    resolved = format_config(result.config_flat)
    with open(os.path.join(out_dir, "config.resolved"), "w") as fh:
        fh.write(resolved)
    provenance = {
        "config_hash": config_hash(result.config_flat),
        "seed": cfg.seed,
        "checkpoint_id": result.checkpoint_id,
        "dataset_checksum": dataset.manifest.checksum,
    }
    from .reporting import save_history_csv, save_history_figure

    history_path = os.path.join(out_dir, "history.csv")
    save_history_csv(result.history, history_path, provenance)
    if not args.no_figures and result.history:
        save_history_figure(result.history, os.path.join(out_dir, "history.png"))

    last = result.history[-1] if result.history else None
    tail = (
        f"final contrastive={last.contrastive_loss:.4f} supervised={last.supervised_loss:.4f}"
        if last
        else "no steps (epochs=0)"
    )
    print(f"trained {cfg.epochs} epochs ({len(result.history)} steps); {tail}")
    print(f"checkpoint: {result.checkpoint_path} (id {result.checkpoint_id})")
    return 0


def cmd_evaluate(args):
    model, _, cid = _load_model(args.checkpoint)
    dataset = _ingest_dataset(args.data, (model.cfg.crop_size,) * 2)
    emb = embed_dataset(model, dataset, branch=args.branch, checkpoint_id=cid)
    report = score_embeddings(emb, k=args.k, seed=args.seed, n_restarts=args.restarts)

    out_dir = _require(args.out, "--out")
    os.makedirs(out_dir, exist_ok=True)
    from .reporting import save_metrics_figure, save_metrics_json

    provenance = {"checkpoint_id": cid, "seed": args.seed, "dataset_checksum": dataset.manifest.checksum}
    path = os.path.join(out_dir, "metrics.json")
    save_metrics_json(report, path, provenance)
    if not args.no_figures:
        save_metrics_figure(report, os.path.join(out_dir, "metrics.png"))
    print(f"nmi={report.nmi:.4f} ami={report.ami:.4f} ari={report.ari:.4f} (k={report.k})")
    print(f"wrote {path}")
    return 0


def cmd_embed(args):
    model, _, cid = _load_model(args.checkpoint)
    dataset = _ingest_dataset(args.data, (model.cfg.crop_size,) * 2)
    emb = embed_dataset(model, dataset, branch=args.branch, checkpoint_id=cid)
    provenance = {
        "checkpoint_id": cid,
        "branch": args.branch,
        "dataset_checksum": dataset.manifest.checksum,
    }
    out = _require(args.out, "--out")
    from .reporting import save_embeddings_bin, save_embeddings_csv

    if args.format == "csv":
        save_embeddings_csv(emb, out, provenance)
    else:
        save_embeddings_bin(emb, out, provenance)
    print(f"wrote {emb.matrix.shape[0]} x {emb.matrix.shape[1]} embeddings to {out}")
    return 0


def _read_embeddings_any(path):
    from .reporting import read_embeddings_bin, read_embeddings_csv

    _require_file(path, "embeddings file")
    with open(path, "rb") as fh:
        head = fh.read(8)
    return read_embeddings_bin(path) if head == b"MCLREMB1" else read_embeddings_csv(path)


def cmd_gmm(args):
    emb = _read_embeddings_any(args.embeddings)
    x = emb.matrix
    if args.normalize:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(norms <= 0):
            raise ConfigurationError("cannot normalize zero-norm embedding rows")
        x = x / norms
    model = gmm_fit(x, n_components=args.components, seed=args.seed, tol=args.tol, max_iter=args.max_iter)
    report = detect_outliers(model, x, ids=emb.ids, min_breadth_ratio=args.min_breadth_ratio)
    assign, _ = gmm_assign(model, x)
    projection, dims = select_dims(x, n_dims=3, seed=args.seed)

    out_dir = _require(args.out, "--out")
    os.makedirs(out_dir, exist_ok=True)
    from .reporting import save_outlier_report, save_projection_csv, save_projection_figure

    provenance = {
        "checkpoint_id": emb.checkpoint_id,
        "seed": args.seed,
        "components": args.components,
        "normalize": args.normalize,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "min_breadth_ratio": args.min_breadth_ratio,
        "selected_dims": ",".join(str(d) for d in dims),
    }
    outliers_path = os.path.join(out_dir, "outliers.json")
    save_outlier_report(report, outliers_path, provenance)
    projection_path = os.path.join(out_dir, "projection.csv")
    save_projection_csv(emb.ids, projection, assign, projection_path, provenance)
    if not args.no_figures:
        save_projection_figure(
            projection, assign, model.outlier_component, os.path.join(out_dir, "projection.png"), dims
        )
    print(
        f"fitted {args.components} components over {x.shape[0]} samples; "
        f"outlier component {model.outlier_component} holds {len(report.outlier_ids)} samples"
    )
    print(f"wrote {outliers_path} and {projection_path}")
    return 0


def cmd_export(args):
    emb = _read_embeddings_any(args.embeddings)
    out = _require(args.out, "--out")
    from .reporting import save_embeddings_bin, save_embeddings_csv

    provenance = {"checkpoint_id": emb.checkpoint_id, "branch": emb.branch}
    if args.format == "csv":
        save_embeddings_csv(emb, out, provenance)
    else:
        save_embeddings_bin(emb, out, provenance)
    print(f"exported {emb.matrix.shape[0]} embeddings to {out} ({args.format})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="maskclr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"maskclr {__version__}")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--height", type=int, default=40)
    p.add_argument("--width", type=int, default=60)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", help="dataset root (directory per class)")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--config", help=f"flat key=value config file (default ${CONFIG_ENV_VAR})")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="K-Means + NMI/AMI/ARI over a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--k", type=int, default=None, help="clusters (default: true class count)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--branch", choices=("full", "crop"), default="full")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="export embeddings for a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out", help="output file")
    p.add_argument("--branch", choices=("full", "crop"), default="full")
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("gmm", help="mixture fit + outlier report over embeddings")
    p.add_argument("--embeddings", help="embeddings file from `maskclr embed` (csv or bin)")
    p.add_argument("--out")
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--min-breadth-ratio", type=float, default=2.5,
                   help="outlier component must be this much broader than the rest (0 disables)")
    p.add_argument("--normalize", action="store_true", help="L2-normalize rows before fitting")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_gmm)

    p = sub.add_parser("export", help="convert an embeddings file between csv and bin")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except MaskclrError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
