"""Sparse graph containers and structural operations.

Graphs are simple, undirected and unweighted, stored in CSR form with every
edge recorded in both directions. Node features are plain float64 arrays of
shape (num_nodes, num_features); no wrapper type is used.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SparseGraph",
    "LabeledGraph",
    "GraphBatch",
    "from_edge_list",
    "spmm_mean",
    "neighbor_sum",
    "degree_onehot",
    "erdos_renyi",
    "induced_subgraph",
    "batch_graphs",
]


def _validate_csr(num_nodes: int, offsets: np.ndarray, cols: np.ndarray) -> None:
    if num_nodes < 0:
        raise ValueError("num_nodes must be non-negative")
    if offsets.shape != (num_nodes + 1,):
        raise ValueError(f"row_offsets must have length {num_nodes + 1}, got {offsets.shape}")
    if offsets[0] != 0 or offsets[-1] != cols.size:
        raise ValueError("row_offsets must start at 0 and end at len(col_indices)")
    if np.any(np.diff(offsets) < 0):
        raise ValueError("row_offsets must be non-decreasing")
    if cols.size == 0:
        return
    if cols.min() < 0 or cols.max() >= num_nodes:
        raise ValueError("col_indices out of range")
    row_ids = np.repeat(np.arange(num_nodes), np.diff(offsets))
    if np.any(cols == row_ids):
        raise ValueError("self-loops must not be stored")
    same_row = row_ids[1:] == row_ids[:-1]
    if np.any(cols[1:][same_row] <= cols[:-1][same_row]):
        raise ValueError("col_indices must be strictly increasing within each row")
    code = row_ids * num_nodes + cols
    rev = cols * num_nodes + row_ids
    if not np.array_equal(np.sort(code), np.sort(rev)):
        raise ValueError("adjacency is not symmetric")


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """CSR adjacency of a simple undirected graph.

    ``row_offsets`` has length ``num_nodes + 1``; ``col_indices`` holds the
    sorted neighbor list of every node back to back, so each undirected edge
    appears twice. Self-loops are never stored; operations that need them
    (e.g. :func:`spmm_mean`) add them implicitly. Instances are treated as
    immutable and are safe to share across threads.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "row_offsets", np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        )
        object.__setattr__(
            self, "col_indices", np.ascontiguousarray(self.col_indices, dtype=np.int64)
        )
        _validate_csr(self.num_nodes, self.row_offsets, self.col_indices)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return self.col_indices.size // 2

    @property
    def degrees(self) -> np.ndarray:
        """Per-node degree, self-loops excluded."""
        return np.diff(self.row_offsets)

    def neighbors(self, node: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[node] : self.row_offsets[node + 1]]

    def to_dense(self) -> np.ndarray:
        """Dense 0/1 adjacency (small graphs / tests only)."""
        dense = np.zeros((self.num_nodes, self.num_nodes))
        row_ids = np.repeat(np.arange(self.num_nodes), self.degrees)
        dense[row_ids, self.col_indices] = 1.0
        return dense


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    """A graph with node features and a class label."""

    graph: SparseGraph
    features: np.ndarray
    label: int

    def __post_init__(self) -> None:
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.graph.num_nodes:
            raise ValueError(
                f"features must be (num_nodes, F), got {feats.shape} for "
                f"{self.graph.num_nodes} nodes"
            )
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Block-diagonal union of several graphs.

    ``graph_of_node`` maps each merged node to its source graph;
    ``node_counts`` gives the segment lengths in merged node order.
    """

    graph: SparseGraph
    features: np.ndarray
    graph_of_node: np.ndarray
    node_counts: np.ndarray
    labels: np.ndarray


def from_edge_list(num_nodes: int, edges, symmetrize: bool = True) -> SparseGraph:
    """Build a canonical CSR graph from (u, v) pairs.

    Duplicate edges are collapsed. With ``symmetrize`` each pair is mirrored;
    otherwise the input must already contain both directions.
    """
    pairs = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if pairs.size:
        if pairs.min() < 0 or pairs.max() >= num_nodes:
            raise ValueError("edge endpoint out of range")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ValueError("self-loops are not allowed")
        if symmetrize:
            pairs = np.concatenate([pairs, pairs[:, ::-1]])
        codes = np.unique(pairs[:, 0] * num_nodes + pairs[:, 1])
        src = codes // num_nodes
        dst = codes % num_nodes
    else:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=num_nodes), out=offsets[1:])
    return SparseGraph(num_nodes, offsets, dst)


def neighbor_sum(graph: SparseGraph, x: np.ndarray) -> np.ndarray:
    """Row i of the result is the sum of x over the neighbors of node i."""
    if x.ndim != 2 or x.shape[0] != graph.num_nodes:
        raise ValueError(f"features of shape {x.shape} do not match {graph.num_nodes} nodes")
    out = np.zeros_like(x, dtype=np.float64)
    if graph.col_indices.size:
        deg = graph.degrees
        nonempty = deg > 0
        starts = graph.row_offsets[:-1][nonempty]
        out[nonempty] = np.add.reduceat(x[graph.col_indices], starts, axis=0)
    return out


def spmm_mean(graph: SparseGraph, x: np.ndarray) -> np.ndarray:
    """Mean aggregation with an implicit self-loop.

    Row i of the result is the mean of feature rows over {i} and i's
    neighbors. Runs in O(|E|*F + N*F); no dense adjacency is formed.
    """
    summed = neighbor_sum(graph, x) + x
    return summed / (graph.degrees + 1)[:, None]


def degree_onehot(graph: SparseGraph, max_degree: int) -> np.ndarray:
    """One-hot node degrees, clamped at ``max_degree`` (F = max_degree + 1)."""
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    cols = np.minimum(graph.degrees, max_degree)
    out = np.zeros((graph.num_nodes, max_degree + 1))
    out[np.arange(graph.num_nodes), cols] = 1.0
    return out


def erdos_renyi(n: int, m: int, seed: int) -> SparseGraph:
    """G(n, m): exactly m distinct undirected edges, uniform without replacement.

    Deterministic for a fixed seed. Edges are sampled as linear indices into
    the strict upper triangle, so the result is independent of draw order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    max_m = n * (n - 1) // 2
    if m > max_m:
        raise ValueError(f"m={m} exceeds the {max_m} possible edges of {n} nodes")
    rng = np.random.default_rng(seed)
    if max_m <= 1 << 22 and m > max_m // 3:
        # Dense regime: enumerate all pairs and sample directly.
        iu, ju = np.triu_indices(n, k=1)
        pick = rng.choice(max_m, size=m, replace=False)
        pairs = np.stack([iu[pick], ju[pick]], axis=1)
        return from_edge_list(n, pairs)
    chosen: set[int] = set()
    while len(chosen) < m:
        draw = rng.integers(0, max_m, size=2 * (m - len(chosen)) + 8)
        for code in draw:
            chosen.add(int(code))
            if len(chosen) == m:
                break
    codes = np.sort(np.fromiter(chosen, dtype=np.int64, count=m))
    # Decode linear upper-triangle index: row i starts at i*(2n - i - 1)/2
    # and holds n - i - 1 entries. The float sqrt can land one row off at
    # boundaries, so correct in both directions.
    i = np.floor((2 * n - 1 - np.sqrt((2 * n - 1) ** 2 - 8.0 * codes)) / 2).astype(np.int64)
    base = i * (2 * n - i - 1) // 2
    i[base > codes] -= 1
    base = i * (2 * n - i - 1) // 2
    i[codes - base >= n - i - 1] += 1
    base = i * (2 * n - i - 1) // 2
    j = codes - base + i + 1
    return from_edge_list(n, np.stack([i, j], axis=1))


def induced_subgraph(graph: SparseGraph, keep) -> SparseGraph:
    """Subgraph on the given sorted, distinct node indices.

    Node u' of the result is keep[u']; an edge (u', v') exists iff
    (keep[u'], keep[v']) was an edge of the input.
    """
    keep = np.asarray(keep, dtype=np.int64)
    if keep.ndim != 1:
        raise ValueError("keep must be a 1-D index array")
    if keep.size:
        if keep.min() < 0 or keep.max() >= graph.num_nodes:
            raise ValueError("keep index out of range")
        if np.any(np.diff(keep) <= 0):
            raise ValueError("keep must be strictly increasing (sorted, distinct)")
    mask = np.zeros(graph.num_nodes, dtype=bool)
    mask[keep] = True
    remap = np.full(graph.num_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    row_ids = np.repeat(np.arange(graph.num_nodes), graph.degrees)
    sel = mask[row_ids] & mask[graph.col_indices]
    new_src = remap[row_ids[sel]]
    new_dst = remap[graph.col_indices[sel]]
    offsets = np.zeros(keep.size + 1, dtype=np.int64)
    np.cumsum(np.bincount(new_src, minlength=keep.size), out=offsets[1:])
    return SparseGraph(keep.size, offsets, new_dst)


def batch_graphs(graphs) -> GraphBatch:
    """Merge graphs into one block-diagonal graph with offset node indices."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    feat_dim = graphs[0].features.shape[1]
    for g in graphs:
        if g.features.shape[1] != feat_dim:
            raise ValueError(
                f"feature dimensions differ: {g.features.shape[1]} vs {feat_dim}"
            )
    counts = np.array([g.graph.num_nodes for g in graphs], dtype=np.int64)
    node_offsets = np.concatenate([[0], np.cumsum(counts)])
    merged_offsets = [np.zeros(1, dtype=np.int64)]
    merged_cols = []
    edge_base = 0
    for g, base in zip(graphs, node_offsets):
        merged_offsets.append(g.graph.row_offsets[1:] + edge_base)
        merged_cols.append(g.graph.col_indices + base)
        edge_base += g.graph.col_indices.size
    merged = SparseGraph(
        int(node_offsets[-1]),
        np.concatenate(merged_offsets),
        np.concatenate(merged_cols) if merged_cols else np.empty(0, dtype=np.int64),
    )
    return GraphBatch(
        graph=merged,
        features=np.concatenate([g.features for g in graphs], axis=0),
        graph_of_node=np.repeat(np.arange(len(graphs)), counts),
        node_counts=counts,
        labels=np.array([g.label for g in graphs], dtype=np.int64),
    )
