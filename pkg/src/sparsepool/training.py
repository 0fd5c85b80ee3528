"""Training loop, evaluation, and the 10-fold cross-validation driver."""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import (
    Dataset,
    FoldSplit,
    degree_feature_bound,
    plain_kfold,
    stratified_kfold,
    with_degree_features,
)
from .engine import NonFiniteGradientError, Tape, adam_step
from .graphs import batch_graphs
from .layers import READOUT_POSITIONS, HierarchicalModel, build_model, model_forward

__all__ = [
    "TrainConfig",
    "RunResult",
    "NonFiniteLossError",
    "DATASET_DEFAULTS",
    "default_config",
    "train_one",
    "evaluate",
    "predict_logits",
    "cross_validate",
    "make_folds",
    "prepare_fold",
    "format_report",
    "format_metrics",
]

# Per-dataset benchmark settings: hidden width, learning rate, epochs.
# All datasets use pool ratio 0.8, three blocks, Adam.
DATASET_DEFAULTS: dict[str, dict] = {
    "ENZYMES": {"hidden_dim": 128, "lr": 0.0005, "epochs": 100},
    "PROTEINS": {"hidden_dim": 64, "lr": 0.005, "epochs": 40},
    "DD": {"hidden_dim": 64, "lr": 0.0005, "epochs": 20},
    "COLLAB": {"hidden_dim": 128, "lr": 0.0005, "epochs": 30},
}

_NAME_ALIASES = {"D&D": "DD"}


class NonFiniteLossError(RuntimeError):
    """Training hit a NaN/inf loss; message carries epoch, batch, param norms."""


@dataclass
class TrainConfig:
    hidden_dim: int
    lr: float
    epochs: int
    pool_ratio: float = 0.8
    num_blocks: int = 3
    batch_size: int = 64
    seed: int = 0
    folds: int = 10
    stratified: bool = True
    readout_position: str = "post_pool"
    max_degree: int | None = None

    def validate(self) -> None:
        if not 0.0 < self.pool_ratio <= 1.0:
            raise ValueError(f"pool_ratio must be in (0, 1], got {self.pool_ratio}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.hidden_dim < 1 or self.num_blocks < 1 or self.batch_size < 1:
            raise ValueError("hidden_dim, num_blocks and batch_size must be >= 1")
        if self.readout_position not in READOUT_POSITIONS:
            raise ValueError(f"readout_position must be one of {READOUT_POSITIONS}")

    def as_dict(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "lr": self.lr,
            "epochs": self.epochs,
            "pool_ratio": self.pool_ratio,
            "num_blocks": self.num_blocks,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "folds": self.folds,
            "stratified": self.stratified,
            "readout_position": self.readout_position,
            "max_degree": self.max_degree,
        }


def default_config(dataset_name: str, **overrides) -> TrainConfig:
    """Benchmark defaults for a known dataset, with explicit overrides on top."""
    key = _NAME_ALIASES.get(dataset_name.upper(), dataset_name.upper())
    if key not in DATASET_DEFAULTS:
        raise ValueError(
            f"no default configuration for dataset {dataset_name!r}; "
            "pass hidden_dim, lr and epochs explicitly"
        )
    settings = dict(DATASET_DEFAULTS[key])
    settings.update(overrides)
    return TrainConfig(**settings)


@dataclass
class RunResult:
    """Cross-validation outcome; the mean is recomputable from the folds."""

    fold_accuracies: list[float]
    mean_accuracy: float
    std_accuracy: float
    fold_epoch_losses: list[list[float]]
    fold_seconds: list[float]
    wall_seconds: float
    config: TrainConfig
    resolved: dict = field(default_factory=dict)


def _param_norms(model: HierarchicalModel) -> str:
    return ", ".join(
        f"{p.name}={float(np.linalg.norm(p.value)):.3g}" for p in model.parameters()
    )


def train_one(graphs, num_classes: int, config: TrainConfig):
    """Train a fresh model on the given graphs.

    Returns ``(model, epoch_losses)`` where the losses are per-epoch means of
    the batch cross-entropies. Mini-batches come from a seeded shuffle each
    epoch; one Adam step per batch. Deterministic per seed.
    """
    graphs = list(graphs)
    if not graphs:
        raise ValueError("training slice is empty")
    config.validate()
    model = build_model(
        in_dim=graphs[0].features.shape[1],
        hidden_dim=config.hidden_dim,
        num_classes=num_classes,
        pool_ratio=config.pool_ratio,
        num_blocks=config.num_blocks,
        seed=config.seed,
        readout_position=config.readout_position,
    )
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(graphs))
        total = 0.0
        for batch_no, start in enumerate(range(0, len(graphs), config.batch_size)):
            chunk = [graphs[i] for i in order[start : start + config.batch_size]]
            batch = batch_graphs(chunk)
            tape = Tape()
            logits = model_forward(tape, batch, model)
            loss = tape.softmax_xent(logits, batch.labels)
            value = float(loss.value)
            if not np.isfinite(value):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}; "
                    f"parameter norms: {_param_norms(model)}"
                )
            tape.backward(loss)
            try:
                adam_step(params, config.lr)
            except NonFiniteGradientError as exc:
                raise NonFiniteLossError(
                    f"{exc} at epoch {epoch}, batch {batch_no}; "
                    f"parameter norms: {_param_norms(model)}"
                ) from exc
            total += value * len(chunk)
        epoch_losses.append(total / len(graphs))
    return model, epoch_losses


def predict_logits(model: HierarchicalModel, graphs, batch_size: int = 256) -> np.ndarray:
    """Logits for each graph, stacked (num_graphs x C)."""
    graphs = list(graphs)
    out = []
    for start in range(0, len(graphs), batch_size):
        batch = batch_graphs(graphs[start : start + batch_size])
        out.append(model_forward(Tape(), batch, model).value)
    return np.concatenate(out, axis=0)


def evaluate(model: HierarchicalModel, graphs) -> float:
    """Accuracy of argmax predictions; logit ties go to the lower class index."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("cannot evaluate on an empty graph list")
    predictions = np.argmax(predict_logits(model, graphs), axis=1)
    labels = np.array([g.label for g in graphs])
    return float(np.mean(predictions == labels))


def make_folds(dataset: Dataset, config: TrainConfig) -> list[FoldSplit]:
    """The evaluation splits a config implies (stratified unless disabled)."""
    if config.stratified:
        return stratified_kfold(dataset.labels(), config.folds, config.seed)
    return plain_kfold(len(dataset.graphs), config.folds, config.seed)


def prepare_fold(dataset: Dataset, split: FoldSplit, config: TrainConfig):
    """Materialize train/test graphs for one fold.

    Degree-featurized datasets get their features rebuilt with a bound
    resolved on the training portion only (95th-percentile policy unless the
    config pins ``max_degree``). Returns (train, test, resolved_bound).
    """
    if np.intersect1d(split.train_indices, split.test_indices).size:
        raise AssertionError("train/test overlap in fold split")
    train = [dataset.graphs[i] for i in split.train_indices]
    test = [dataset.graphs[i] for i in split.test_indices]
    bound = None
    if dataset.feature_kind == "degree_onehot":
        bound = degree_feature_bound([g.graph for g in train], config.max_degree)
        train = with_degree_features(train, bound)
        test = with_degree_features(test, bound)
    return train, test, bound


def _run_fold(args):
    dataset, split, config = args
    start = time.perf_counter()
    train, test, bound = prepare_fold(dataset, split, config)
    fold_config = replace(config, seed=config.seed + split.fold_index)
    model, losses = train_one(train, dataset.num_classes, fold_config)
    accuracy = evaluate(model, test)
    return accuracy, losses, time.perf_counter() - start, bound


def cross_validate(dataset: Dataset, config: TrainConfig, jobs: int = 1) -> RunResult:
    """Ten independent train/evaluate runs with per-fold re-initialization.

    Fold f trains with seed ``config.seed + f`` and never sees its own test
    graphs. Folds are independent, so ``jobs > 1`` runs them in parallel
    without changing any result.
    """
    config.validate()
    wall_start = time.perf_counter()
    splits = make_folds(dataset, config)
    work = [(dataset, split, config) for split in splits]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_fold, work))
    else:
        outcomes = [_run_fold(w) for w in work]
    accuracies = [o[0] for o in outcomes]
    bounds = [o[3] for o in outcomes]
    return RunResult(
        fold_accuracies=accuracies,
        mean_accuracy=float(np.mean(accuracies)),
        std_accuracy=float(np.std(accuracies)),
        fold_epoch_losses=[o[1] for o in outcomes],
        fold_seconds=[o[2] for o in outcomes],
        wall_seconds=time.perf_counter() - wall_start,
        config=config,
        resolved={
            "dataset": dataset.name,
            "num_classes": dataset.num_classes,
            "feature_kind": dataset.feature_kind,
            "degree_bounds": bounds,
        },
    )


def format_metrics(result: RunResult) -> str:
    """Machine-readable per-fold metrics. Deterministic: no timing columns."""
    lines = ["fold,accuracy,epochs"]
    for fold, acc in enumerate(result.fold_accuracies):
        lines.append(f"{fold},{acc!r},{result.config.epochs}")
    return "\n".join(lines) + "\n"


def format_report(result: RunResult) -> str:
    """Human-readable per-fold table with summary statistics and timing."""
    lines = [
        f"dataset: {result.resolved.get('dataset', '?')}",
        f"config: {result.config.as_dict()}",
        f"resolved: {result.resolved}",
        "",
        "fold  accuracy  seconds",
    ]
    for fold, (acc, sec) in enumerate(zip(result.fold_accuracies, result.fold_seconds)):
        lines.append(f"{fold:>4}  {acc:8.4f}  {sec:7.1f}")
    lines += [
        "",
        f"mean accuracy: {result.mean_accuracy:.4f}",
        f"std accuracy:  {result.std_accuracy:.4f}",
        f"wall seconds:  {result.wall_seconds:.1f}",
    ]
    return "\n".join(lines) + "\n"
