"""Command-line interface binding all modules into reproducible experiments.

Exit codes: 0 success, 2 argument/validation/data errors, 3 numeric failures
during training. Every command writes a run manifest that captures each
resolved setting, the seeds, and dataset file checksums.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import DatasetFormatError, file_checksum, parse_tu_dataset
from .engine import Tape, load_parameters, save_parameters
from .graphs import batch_graphs
from .layers import build_model, forward_summaries, model_forward
from .membench import scaling_sweep
from .training import (
    DATASET_DEFAULTS,
    NonFiniteLossError,
    TrainConfig,
    cross_validate,
    evaluate,
    format_metrics,
    format_report,
    make_folds,
    prepare_fold,
    train_one,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

_DATA_FILES = ("_A.txt", "_graph_indicator.txt", "_graph_labels.txt",
               "_node_labels.txt", "_node_attributes.txt")


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="dataset name (directory prefix)")
    p.add_argument("--data-dir", default="data", help="directory holding the dataset files")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, default=None, help="hidden width (default: per-dataset)")
    p.add_argument("--ratio", type=float, default=0.8, help="pool ratio k")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default: per-dataset)")
    p.add_argument("--epochs", type=int, default=None, help="epochs (default: per-dataset)")
    p.add_argument("--batch-size", type=int, default=64, help="mini-batch size")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed")
    p.add_argument("--blocks", type=int, default=3, help="number of conv-pool blocks")
    p.add_argument(
        "--readout-position",
        choices=("pre_pool", "post_pool"),
        default="post_pool",
        help="take the per-block readout before or after pooling",
    )
    p.add_argument(
        "--max-degree",
        type=int,
        default=None,
        help="degree-feature cap (default: 95th percentile of training degrees)",
    )
    p.add_argument(
        "--no-stratify",
        action="store_true",
        help="use plain instead of stratified folds",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsepool",
        description="Sparse hierarchical graph classification experiments",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(
        dest="command",
        required=True,
        parser_class=lambda **kw: argparse.ArgumentParser(
            formatter_class=argparse.ArgumentDefaultsHelpFormatter, **kw
        ),
    )

    p_train = sub.add_parser("train", help="train on a single stratified split")
    _add_dataset_args(p_train)
    _add_config_args(p_train)
    p_train.add_argument("--out", default=None, help="output directory")
    p_train.set_defaults(fn=cmd_train)

    p_cv = sub.add_parser("cv", help="10-fold cross-validation")
    _add_dataset_args(p_cv)
    _add_config_args(p_cv)
    p_cv.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    p_cv.add_argument("--out", default=None, help="output directory")
    p_cv.add_argument(
        "--show-defaults", action="store_true", help="print per-dataset defaults and exit"
    )
    p_cv.set_defaults(fn=cmd_cv)

    p_mem = sub.add_parser("bench-mem", help="memory-scaling benchmark")
    p_mem.add_argument("--sizes", default="2000,4000,8000,16000", help="comma-separated node counts")
    p_mem.add_argument("--budget", default=None, help="memory budget, e.g. 1GiB or 536870912")
    p_mem.add_argument("--seed", type=int, default=0)
    p_mem.add_argument("--out", default=None, help="output directory")
    p_mem.set_defaults(fn=cmd_bench_mem)

    p_exp = sub.add_parser("export-summaries", help="export per-graph summary vectors")
    _add_dataset_args(p_exp)
    _add_config_args(p_exp)
    p_exp.add_argument("--model", required=True, help="parameter file from `train`")
    p_exp.add_argument("--fold", type=int, default=0, help="fold index of the split")
    p_exp.add_argument("--split", choices=("test", "train", "all"), default="test")
    p_exp.add_argument(
        "--post-head", action="store_true", help="export logits instead of summaries"
    )
    p_exp.add_argument("--out", default=None, help="output directory")
    p_exp.set_defaults(fn=cmd_export_summaries)
    return parser


def _resolve_config(args) -> TrainConfig:
    key = args.dataset.upper().replace("D&D", "DD")
    defaults = DATASET_DEFAULTS.get(key, {})
    hidden = args.hidden if args.hidden is not None else defaults.get("hidden_dim")
    lr = args.lr if args.lr is not None else defaults.get("lr")
    epochs = args.epochs if args.epochs is not None else defaults.get("epochs")
    if hidden is None or lr is None or epochs is None:
        raise ValueError(
            f"unknown dataset {args.dataset!r}: pass --hidden, --lr and --epochs explicitly"
        )
    config = TrainConfig(
        hidden_dim=hidden,
        lr=lr,
        epochs=epochs,
        pool_ratio=args.ratio,
        num_blocks=args.blocks,
        batch_size=args.batch_size,
        seed=args.seed,
        stratified=not args.no_stratify,
        readout_position=args.readout_position,
        max_degree=args.max_degree,
    )
    config.validate()
    return config


def _dataset_checksums(data_dir: str, name: str) -> dict[str, str]:
    sums = {}
    for suffix in _DATA_FILES:
        path = Path(data_dir) / f"{name}{suffix}"
        if path.is_file():
            sums[f"checksum.{path.name}"] = file_checksum(path)
    return sums


def _write_manifest(out_dir: Path, command: str, entries: dict) -> None:
    lines = [f"command = {command}"]
    for key in sorted(entries):
        lines.append(f"{key} = {entries[key]}")
    lines.append(f"timestamp = {time.strftime('%Y-%m-%dT%H:%M:%S%z')}")
    lines.append(f"version = {__version__}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _manifest_entries(args, config: TrainConfig) -> dict:
    entries = {f"config.{k}": v for k, v in config.as_dict().items()}
    entries["dataset"] = args.dataset
    entries["data_dir"] = args.data_dir
    entries.update(_dataset_checksums(args.data_dir, args.dataset))
    return entries


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    config = _resolve_config(args)
    dataset = parse_tu_dataset(args.data_dir, args.dataset)
    splits = make_folds(dataset, config)
    train, test, bound = prepare_fold(dataset, splits[0], config)
    model, losses = train_one(train, dataset.num_classes, config)
    train_acc = evaluate(model, train)
    test_acc = evaluate(model, test)

    out = _out_dir(args, f"runs/train_{args.dataset}")
    save_parameters(model.parameters(), out / "model.params")
    metrics = (
        "metric,value\n"
        f"train_accuracy,{train_acc!r}\n"
        f"test_accuracy,{test_acc!r}\n"
        f"final_loss,{losses[-1]!r}\n"
    )
    (out / "metrics.csv").write_text(metrics, encoding="utf-8")
    entries = _manifest_entries(args, config)
    entries["resolved.degree_bound"] = bound
    entries["resolved.fold"] = 0
    _write_manifest(out, "train", entries)
    print(f"train accuracy {train_acc:.4f}, test accuracy {test_acc:.4f}")
    print(f"wrote {out / 'model.params'}")
    return EXIT_OK


def cmd_cv(args) -> int:
    if args.show_defaults:
        print("dataset   hidden  lr      epochs  ratio  blocks  batch")
        for name, d in DATASET_DEFAULTS.items():
            print(
                f"{name:<9} {d['hidden_dim']:<7} {d['lr']:<7} {d['epochs']:<7} 0.8    3       64"
            )
        return EXIT_OK
    config = _resolve_config(args)
    dataset = parse_tu_dataset(args.data_dir, args.dataset)
    result = cross_validate(dataset, config, jobs=args.jobs)

    out = _out_dir(args, f"runs/cv_{args.dataset}")
    (out / "metrics.csv").write_text(format_metrics(result), encoding="utf-8")
    (out / "report.txt").write_text(format_report(result), encoding="utf-8")
    entries = _manifest_entries(args, config)
    entries["resolved.degree_bounds"] = result.resolved["degree_bounds"]
    entries["jobs"] = args.jobs
    _write_manifest(out, "cv", entries)
    print(format_report(result))
    return EXIT_OK


def _parse_budget(text: str | None) -> int | None:
    if text is None:
        return None
    units = {"KB": 10**3, "MB": 10**6, "GB": 10**9,
             "KIB": 2**10, "MIB": 2**20, "GIB": 2**30, "B": 1}
    cleaned = text.strip().upper().replace(" ", "")
    for unit in sorted(units, key=len, reverse=True):
        if cleaned.endswith(unit):
            return int(float(cleaned[: -len(unit)]) * units[unit])
    return int(float(cleaned))


def cmd_bench_mem(args) -> int:
    sizes = [int(tok) for tok in args.sizes.split(",") if tok.strip()]
    budget = _parse_budget(args.budget)
    result = scaling_sweep(sizes, budget_bytes=budget, seed=args.seed)
    out = _out_dir(args, "runs/membench")
    (out / "membench.csv").write_text(result.to_csv(), encoding="utf-8")
    _write_manifest(
        out,
        "bench-mem",
        {
            "sizes": args.sizes,
            "budget_bytes": budget,
            "seed": args.seed,
            "slope_sparse": result.slope_sparse,
            "slope_dense": result.slope_dense,
            "dense_model_note": (
                "footprint model counts the minimal buffers any dense "
                "soft-assignment pooling variant must hold"
            ),
        },
    )
    print(result.to_csv(), end="")
    print(f"log-log slope sparse: {result.slope_sparse:.3f}")
    print(f"log-log slope dense:  {result.slope_dense:.3f}")
    return EXIT_OK


def cmd_export_summaries(args) -> int:
    config = _resolve_config(args)
    dataset = parse_tu_dataset(args.data_dir, args.dataset)
    splits = make_folds(dataset, config)
    if not 0 <= args.fold < len(splits):
        raise ValueError(f"fold must be in 0..{len(splits) - 1}")
    split = splits[args.fold]
    train, test, bound = prepare_fold(dataset, split, config)
    if args.split == "test":
        graphs, ids = test, split.test_indices
    elif args.split == "train":
        graphs, ids = train, split.train_indices
    else:
        graphs = train + test
        ids = np.concatenate([split.train_indices, split.test_indices])

    in_dim = graphs[0].features.shape[1] if graphs else dataset.graphs[0].features.shape[1]
    model = build_model(
        in_dim=in_dim,
        hidden_dim=config.hidden_dim,
        num_classes=dataset.num_classes,
        pool_ratio=config.pool_ratio,
        num_blocks=config.num_blocks,
        seed=config.seed,
        readout_position=config.readout_position,
    )
    model.load_state(load_parameters(args.model))

    rows = []
    for start in range(0, len(graphs), 256):
        chunk = graphs[start : start + 256]
        batch = batch_graphs(chunk)
        tape = Tape()
        vec = (
            model_forward(tape, batch, model)
            if args.post_head
            else forward_summaries(tape, batch, model)
        )
        rows.append(vec.value)
    vectors = np.concatenate(rows, axis=0) if rows else np.zeros((0, 0))

    out = _out_dir(args, f"runs/summaries_{args.dataset}")
    path = out / ("logits.csv" if args.post_head else "summaries.csv")
    with open(path, "w", encoding="utf-8") as fh:
        for gid, graph, row in zip(ids, graphs, vectors):
            values = ",".join(repr(float(v)) for v in row)
            fh.write(f"{int(gid)},{graph.label},{values}\n")
    entries = _manifest_entries(args, config)
    entries["model"] = args.model
    entries["fold"] = args.fold
    entries["split"] = args.split
    entries["post_head"] = args.post_head
    entries["resolved.degree_bound"] = bound
    entries["rows"] = len(graphs)
    _write_manifest(out, "export-summaries", entries)
    print(f"wrote {len(graphs)} rows to {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
