"""Command-line entry point: one subcommand per pipeline stage.

Every run gets its own directory (timestamped unless --run-dir is given)
containing the resolved configuration, its hash, and the stage artifacts,
which is enough to reproduce the outputs byte-for-byte on the same platform.

Exit codes: 0 success, 2 invalid configuration, 3 missing or malformed
inputs, 4 violated invariant or precondition.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from ._kernels import BACKEND
from .config import RunConfig, config_reference, load_config
from .errors import ConfigError, DataError, MissingInputError, SgnnError
from .evaluation import compute_metrics, export_embeddings, save_metrics
from .explain import (
    aggregate_class_saliency,
    global_mask_relevance,
    save_edge_csv,
    save_node_csv,
)
from .graphs import assemble_dataset, load_dataset, load_trials, save_dataset
from .labels import build_label_set, load_annotations, load_label_set, load_lexicons, save_label_set
from .model import load_checkpoint, materialize_mask, save_checkpoint
from .numerics import RngStream
from .synth import build_synth_labels, generate, save_ground_truth, write_trials
from .training import train

SUBCOMMANDS = ("fuse-labels", "build-graphs", "synth", "train", "eval", "explain", "embed")

_PATH_OVERRIDES = (
    "annotations",
    "lexicon",
    "manifest",
    "labels",
    "graphs",
    "checkpoint",
    "ground_truth",
    "parcel_names",
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgnn",
        description="Signed-GNN functional connectivity pipeline.",
        epilog=config_reference(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"sgnn {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    for name, help_text in (
        ("fuse-labels", "fuse annotation evidence into labels.json"),
        ("build-graphs", "build graphs.bin from time series and labels"),
        ("synth", "generate the synthetic planted-subnetwork harness"),
        ("train", "train the signed GNN and write a checkpoint"),
        ("eval", "compute metrics.json on the test split"),
        ("explain", "export global and class relevance CSVs"),
        ("embed", "export pooled embeddings per graph"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (defaults used if omitted)")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--run-dir", help="exact run directory (default: timestamped)")
        p.add_argument("--output-dir", help="override paths.output_dir")
        for field in _PATH_OVERRIDES:
            p.add_argument(
                f"--{field.replace('_', '-')}", dest=f"path_{field}",
                help=f"override paths.{field}",
            )
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed: must be nonnegative")
        cfg.seed = args.seed
    if args.output_dir:
        cfg.paths.output_dir = args.output_dir
    for field in _PATH_OVERRIDES:
        value = getattr(args, f"path_{field}")
        if value:
            setattr(cfg.paths, field, value)
    return cfg


def _make_run_dir(cfg: RunConfig, subcommand: str, explicit: str | None) -> Path:
    if explicit:
        run_dir = Path(explicit)
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S-%f")
        run_dir = Path(cfg.paths.output_dir) / f"{subcommand}-{stamp}"
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_doc()
    (run_dir / "resolved_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n"
    )
    (run_dir / "run_info.json").write_text(
        json.dumps(
            {
                "subcommand": subcommand,
                "config_hash": cfg.hash(),
                "seed": cfg.seed,
                "package_version": __version__,
                "kernel_backend": BACKEND,
                "started_utc": datetime.now(timezone.utc).isoformat(),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return run_dir


def _require(value: str | None, field: str) -> str:
    if not value:
        raise MissingInputError(f"paths.{field} is required for this subcommand")
    return value


def _class_names(cfg: RunConfig) -> list[str] | None:
    if cfg.paths.labels:
        return load_label_set(cfg.paths.labels).categories
    return None


def _load_parcel_names(cfg: RunConfig) -> dict[int, str] | None:
    if not cfg.paths.parcel_names:
        return None
    path = Path(cfg.paths.parcel_names)
    if not path.exists():
        raise MissingInputError(f"parcel names file not found: {path}")
    try:
        raw = json.loads(path.read_text())
        return {int(k): str(v) for k, v in raw.items()}
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise DataError(f"parcel names file {path} is malformed: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_fuse_labels(cfg: RunConfig, run_dir: Path) -> None:
    annotations = load_annotations(_require(cfg.paths.annotations, "annotations"))
    lexicons = load_lexicons(_require(cfg.paths.lexicon, "lexicon"))
    labels = build_label_set(
        annotations,
        lexicons,
        cfg.ratios(),
        RngStream(cfg.seed).child("split"),
        alpha_overrides=cfg.alpha,
    )
    out = run_dir / "labels.json"
    save_label_set(labels, out)
    print(f"wrote {out} ({len(labels.images)} images, {len(labels.categories)} categories)")


def _load_or_build_dataset(cfg: RunConfig, run_dir: Path):
    if cfg.paths.graphs:
        return load_dataset(cfg.paths.graphs, class_names=_class_names(cfg))
    if cfg.paths.manifest and cfg.paths.labels:
        trials = load_trials(cfg.paths.manifest)
        labels = load_label_set(cfg.paths.labels)
        dataset = assemble_dataset(
            trials, labels, cfg.block_size, RngStream(cfg.seed).child("balance")
        )
        out = run_dir / "graphs.bin"
        save_dataset(dataset, out)
        print(f"wrote {out} ({len(dataset.graphs)} graphs)")
        return dataset
    raise MissingInputError(
        "need paths.graphs, or paths.manifest plus paths.labels, to obtain a dataset"
    )


def _cmd_build_graphs(cfg: RunConfig, run_dir: Path) -> None:
    trials = load_trials(_require(cfg.paths.manifest, "manifest"))
    labels = load_label_set(_require(cfg.paths.labels, "labels"))
    dataset = assemble_dataset(
        trials, labels, cfg.block_size, RngStream(cfg.seed).child("balance")
    )
    out = run_dir / "graphs.bin"
    save_dataset(dataset, out)
    counts = {split: dataset.class_counts(split) for split in ("train", "val", "test")}
    print(f"wrote {out} ({len(dataset.graphs)} graphs, class counts {counts})")


def _cmd_synth(cfg: RunConfig, run_dir: Path) -> None:
    synth_cfg = cfg.synth_config()
    trials, truth = generate(synth_cfg)
    manifest = write_trials(trials, run_dir)
    labels = build_synth_labels(synth_cfg)
    save_label_set(labels, run_dir / "labels.json")
    save_ground_truth(truth, run_dir / "ground_truth.json")
    print(
        f"wrote {manifest} ({len(trials)} trials), labels.json, ground_truth.json"
    )


def _cmd_train(cfg: RunConfig, run_dir: Path) -> None:
    dataset = _load_or_build_dataset(cfg, run_dir)
    params, history = train(dataset, cfg.train_config())
    ckpt = run_dir / "model.ckpt"
    save_checkpoint(params, ckpt, config_hash=cfg.hash(), best_epoch=history.best_epoch)
    hist_path = run_dir / "history.csv"
    with hist_path.open("w") as fh:
        fh.write("epoch,train_loss,val_loss,val_acc\n")
        for i in range(history.epochs_run):
            fh.write(
                f"{i + 1},{history.train_loss[i]!r},{history.val_loss[i]!r},"
                f"{history.val_acc[i]!r}\n"
            )
    print(
        f"wrote {ckpt} (best epoch {history.best_epoch}/{history.epochs_run}, "
        f"stop: {history.stop_reason})"
    )


def _cmd_eval(cfg: RunConfig, run_dir: Path) -> None:
    params, meta = load_checkpoint(_require(cfg.paths.checkpoint, "checkpoint"))
    dataset = load_dataset(_require(cfg.paths.graphs, "graphs"), class_names=_class_names(cfg))
    metrics = compute_metrics(params, dataset, seed=cfg.seed, config_hash=cfg.hash())
    out = run_dir / "metrics.json"
    save_metrics(metrics, out)
    print(
        f"wrote {out} (accuracy {metrics['accuracy']:.4f}, "
        f"macro AP {metrics['macro_ap']:.4f}, n={metrics['n_test']})"
    )


def _cmd_explain(cfg: RunConfig, run_dir: Path) -> None:
    params, meta = load_checkpoint(_require(cfg.paths.checkpoint, "checkpoint"))
    dataset = load_dataset(_require(cfg.paths.graphs, "graphs"), class_names=_class_names(cfg))
    parcel_names = _load_parcel_names(cfg)
    p = dataset.num_parcels
    limit = p * (p - 1) // 2
    if cfg.explain.top_k > limit:
        raise ConfigError(
            f"explain.top_k: {cfg.explain.top_k} exceeds the {limit} "
            f"undirected edges of a {p}-parcel graph"
        )
    k = cfg.explain.top_k

    mask = materialize_mask(params.mask_raw)
    global_map = global_mask_relevance(mask, k=k)
    save_edge_csv(global_map, run_dir / "relevance_global.csv")
    save_node_csv(global_map, run_dir / "nodes_global.csv", parcel_names)

    names = dataset.class_names
    for c in range(dataset.num_classes):
        try:
            rmap = aggregate_class_saliency(params, dataset, c, k=k)
        except ValueError:
            # nothing classified correctly for this class; fall back to all
            # of its test graphs rather than aborting the report
            print(
                f"warning: class {names[c]} has no correctly classified test "
                "graphs; aggregating over all its test graphs",
                file=sys.stderr,
            )
            rmap = aggregate_class_saliency(params, dataset, c, k=k, only_correct=False)
        save_edge_csv(rmap, run_dir / f"relevance_class_{names[c]}.csv")
        save_node_csv(rmap, run_dir / f"nodes_class_{names[c]}.csv", parcel_names)
    print(f"wrote relevance CSVs for global + {dataset.num_classes} classes to {run_dir}")


def _cmd_embed(cfg: RunConfig, run_dir: Path) -> None:
    params, meta = load_checkpoint(_require(cfg.paths.checkpoint, "checkpoint"))
    dataset = load_dataset(_require(cfg.paths.graphs, "graphs"), class_names=_class_names(cfg))
    out = run_dir / "embeddings.csv"
    rows = export_embeddings(params, dataset, out)
    print(f"wrote {out} ({rows} rows)")


_DISPATCH = {
    "fuse-labels": _cmd_fuse_labels,
    "build-graphs": _cmd_build_graphs,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "explain": _cmd_explain,
    "embed": _cmd_embed,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not args.subcommand:
        parser.print_help()
        return 2
    try:
        cfg = _resolve_config(args)
        run_dir = _make_run_dir(cfg, args.subcommand, args.run_dir)
        _DISPATCH[args.subcommand](cfg, run_dir)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MissingInputError, DataError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except (SgnnError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def console_main() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    console_main()
