"""Model layers: mean-aggregation convolution, gated top-k pooling, mean/max
readout, and their composition into the stacked classifier."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import Parameter, Tape, Var, glorot_init
from .graphs import GraphBatch, SparseGraph, induced_subgraph

__all__ = [
    "MPConvLayer",
    "TopKPoolLayer",
    "MLPHead",
    "HierarchicalModel",
    "build_model",
    "kept_count",
    "mpconv_forward",
    "topk_pool",
    "readout",
    "aggregate_summaries",
    "forward_summaries",
    "model_forward",
    "READOUT_POSITIONS",
]

READOUT_POSITIONS = ("pre_pool", "post_pool")


@dataclass(eq=False)
class MPConvLayer:
    """Mean-aggregation convolution with a skip projection (two F x F' maps)."""

    theta: Parameter
    theta_skip: Parameter

    def __post_init__(self) -> None:
        if self.theta.value.shape != self.theta_skip.value.shape:
            raise ValueError("theta and theta_skip must share one shape")

    @property
    def in_dim(self) -> int:
        return self.theta.value.shape[0]

    @property
    def out_dim(self) -> int:
        return self.theta.value.shape[1]


@dataclass(eq=False)
class TopKPoolLayer:
    """Projection-score pooling that keeps the top ceil(ratio * N) nodes."""

    p_vec: Parameter
    ratio: float

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"pool ratio must be in (0, 1], got {self.ratio}")
        if self.p_vec.value.ndim != 1:
            raise ValueError("p_vec must be 1-D")


@dataclass(eq=False)
class MLPHead:
    """Two-layer classifier head: 2F' -> F' (ReLU) -> C, with biases."""

    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter


class HierarchicalModel:
    """Stack of conv-pool blocks with per-block readout and an MLP head.

    All blocks share one hidden width so the per-block summaries can be
    summed into a single fixed-size vector.
    """

    def __init__(self, blocks, head: MLPHead, readout_position: str = "post_pool"):
        if readout_position not in READOUT_POSITIONS:
            raise ValueError(f"readout_position must be one of {READOUT_POSITIONS}")
        blocks = list(blocks)
        if not blocks:
            raise ValueError("model needs at least one conv-pool block")
        hidden = blocks[0][0].out_dim
        for conv, pool in blocks:
            if conv.out_dim != hidden:
                raise ValueError("all blocks must share one hidden width")
            if pool.p_vec.value.shape != (hidden,):
                raise ValueError("pool projection length must equal the hidden width")
        self.blocks = blocks
        self.head = head
        self.readout_position = readout_position

    @property
    def in_dim(self) -> int:
        return self.blocks[0][0].in_dim

    @property
    def hidden_dim(self) -> int:
        return self.blocks[0][0].out_dim

    @property
    def num_classes(self) -> int:
        return self.head.w2.value.shape[1]

    def parameters(self) -> list[Parameter]:
        out = []
        for conv, pool in self.blocks:
            out.extend([conv.theta, conv.theta_skip, pool.p_vec])
        out.extend([self.head.w1, self.head.b1, self.head.w2, self.head.b2])
        return out

    def load_state(self, entries) -> None:
        """Assign named parameter values (e.g. from a parameter file)."""
        params = {p.name: p for p in self.parameters()}
        seen = set()
        for name, value in entries:
            p = params.get(name)
            if p is None:
                raise ValueError(f"unknown parameter {name!r}")
            if value.shape != p.value.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: file {value.shape}, model {p.value.shape}"
                )
            p.value[...] = value
            seen.add(name)
        missing = set(params) - seen
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")


def build_model(
    in_dim: int,
    hidden_dim: int,
    num_classes: int,
    pool_ratio: float = 0.8,
    num_blocks: int = 3,
    seed: int = 0,
    readout_position: str = "post_pool",
) -> HierarchicalModel:
    """Glorot-initialized model; biases start at zero. Deterministic per seed."""
    seeds = iter(np.random.SeedSequence(seed).generate_state(3 * num_blocks + 2))
    blocks = []
    for i in range(num_blocks):
        fin = in_dim if i == 0 else hidden_dim
        conv = MPConvLayer(
            Parameter(f"block{i}.theta", glorot_init(fin, hidden_dim, int(next(seeds)))),
            Parameter(f"block{i}.theta_skip", glorot_init(fin, hidden_dim, int(next(seeds)))),
        )
        pool = TopKPoolLayer(
            Parameter(f"block{i}.p", glorot_init(hidden_dim, 1, int(next(seeds))).ravel()),
            pool_ratio,
        )
        blocks.append((conv, pool))
    head = MLPHead(
        Parameter("head.w1", glorot_init(2 * hidden_dim, hidden_dim, int(next(seeds)))),
        Parameter("head.b1", np.zeros((1, hidden_dim))),
        Parameter("head.w2", glorot_init(hidden_dim, num_classes, int(next(seeds)))),
        Parameter("head.b2", np.zeros((1, num_classes))),
    )
    return HierarchicalModel(blocks, head, readout_position)


def kept_count(n: int, ratio: float) -> int:
    """ceil(ratio * n), clamped to [1, n].

    The tiny backoff keeps float noise just above an integer (e.g.
    0.8 * 5 -> 4.0000000000000002) from inflating the count.
    """
    return max(1, min(n, int(math.ceil(ratio * n - 1e-9))))


def mpconv_forward(
    tape: Tape, graph: SparseGraph, x: Var, layer: MPConvLayer, segments=None
) -> Var:
    """ReLU(mean_aggregate(X) @ theta + X @ theta_skip).

    ``segments`` (per-graph node counts of a block-diagonal batch) keeps the
    products bit-identical with per-graph runs.
    """
    if x.value.shape[1] != layer.in_dim:
        raise ValueError(
            f"feature dim {x.value.shape[1]} does not match layer input dim {layer.in_dim}"
        )
    agg = tape.spmm_mean(graph, x)
    return tape.relu(
        tape.add(
            tape.matmul(agg, tape.param(layer.theta), segments),
            tape.matmul(x, tape.param(layer.theta_skip), segments),
        )
    )


def _select_topk(scores: np.ndarray, counts, ratio: float, probe: dict | None):
    """Per-segment top-k indices (ties: lower index), re-sorted ascending."""
    selected = []
    new_counts = []
    start = 0
    for n in counts:
        n = int(n)
        seg = scores[start : start + n]
        k = kept_count(n, ratio)
        order = np.argsort(-seg, kind="stable")
        selected.append(start + np.sort(order[:k]))
        new_counts.append(k)
        if probe is not None:
            if 0 < k < n:
                gap = float(seg[order[k - 1]] - seg[order[k]])
                cur = probe.get("score_boundary_gap")
                probe["score_boundary_gap"] = gap if cur is None else min(cur, gap)
            if n > 1:
                min_gap = float(np.min(np.diff(np.sort(seg))))
                cur = probe.get("score_min_gap")
                probe["score_min_gap"] = min_gap if cur is None else min(cur, min_gap)
        start += n
    return np.concatenate(selected), np.asarray(new_counts, dtype=np.int64)


def _topk_pool_segments(tape, graph, x, layer, counts):
    if x.value.shape[1] != layer.p_vec.value.shape[0]:
        raise ValueError(
            f"feature dim {x.value.shape[1]} does not match projection length "
            f"{layer.p_vec.value.shape[0]}"
        )
    raw = tape.vecdot(x, tape.param(layer.p_vec), counts)
    scores = tape.div_by_norm(raw, tape.param(layer.p_vec))
    gate = tape.tanh_elem(scores)
    gated = tape.scale_rows(x, gate)
    idx, new_counts = _select_topk(scores.value, counts, layer.ratio, tape.probe)
    pooled_x = tape.gather_rows(gated, idx)
    sub = induced_subgraph(graph, idx)
    tape.note(sub.row_offsets, "graph/csr")
    tape.note(sub.col_indices, "graph/csr")
    return sub, pooled_x, idx, new_counts


def topk_pool(tape: Tape, graph: SparseGraph, x: Var, layer: TopKPoolLayer):
    """Score, gate and slice one graph; returns (graph', X', kept indices).

    Scores are X p / ||p||; kept rows are gated by tanh(score) so the
    projection vector receives gradient. Gradient flows into retained rows
    of X only.
    """
    if graph.num_nodes == 0:
        raise ValueError("cannot pool an empty graph")
    sub, pooled_x, idx, _ = _topk_pool_segments(
        tape, graph, x, layer, np.array([graph.num_nodes])
    )
    return sub, pooled_x, idx


def readout(tape: Tape, x: Var) -> Var:
    """Column-wise [mean || max] over all node rows, as a 1 x 2F row."""
    if x.value.shape[0] == 0:
        raise ValueError("cannot read out an empty feature matrix")
    return tape.concat_cols(tape.row_mean(x), tape.row_max(x))


def aggregate_summaries(tape: Tape, summaries) -> Var:
    """Elementwise sum of the per-block summaries."""
    return tape.sum_tensors(list(summaries))


def _segment_readout(tape: Tape, x: Var, counts) -> Var:
    rows = []
    start = 0
    for n in counts:
        n = int(n)
        seg = x if len(counts) == 1 else tape.gather_rows(x, np.arange(start, start + n))
        rows.append(readout(tape, seg))
        start += n
    return rows[0] if len(rows) == 1 else tape.concat_rows(rows)


def forward_summaries(tape: Tape, batch: GraphBatch, model: HierarchicalModel) -> Var:
    """Per-graph summary vectors (num_graphs x 2F'), summed over all blocks."""
    if batch.features.shape[1] != model.in_dim:
        raise ValueError(
            f"batch feature dim {batch.features.shape[1]} does not match "
            f"model input dim {model.in_dim}"
        )
    graph = batch.graph
    counts = np.asarray(batch.node_counts, dtype=np.int64)
    x = tape.leaf(batch.features)
    per_block = []
    for conv, pool in model.blocks:
        h = mpconv_forward(tape, graph, x, conv, counts)
        if model.readout_position == "pre_pool":
            per_block.append(_segment_readout(tape, h, counts))
        graph, x, _, counts = _topk_pool_segments(tape, graph, h, pool, counts)
        if model.readout_position == "post_pool":
            per_block.append(_segment_readout(tape, x, counts))
    return aggregate_summaries(tape, per_block)


def model_forward(tape: Tape, batch: GraphBatch, model: HierarchicalModel) -> Var:
    """Logits (num_graphs x C) for a batch; bit-equal to per-graph runs stacked."""
    s = forward_summaries(tape, batch, model)
    rows = np.ones(s.value.shape[0], dtype=np.int64)
    hidden = tape.relu(
        tape.add(tape.matmul(s, tape.param(model.head.w1), rows), tape.param(model.head.b1))
    )
    return tape.add(
        tape.matmul(hidden, tape.param(model.head.w2), rows), tape.param(model.head.b2)
    )
