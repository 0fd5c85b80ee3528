"""TUDataset parsing, serialization round-trips, and fold generation."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_graph
from sparsepool.datasets import (
    Dataset,
    DatasetFormatError,
    degree_feature_bound,
    parse_tu_dataset,
    stratified_kfold,
    write_tu_dataset,
)
from sparsepool.graphs import LabeledGraph, from_edge_list


def write_corpus(directory, name, files: dict[str, str]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for suffix, content in files.items():
        (directory / f"{name}_{suffix}.txt").write_text(content, encoding="utf-8")


class TestParse:
    def test_minimal_fixture(self, fixtures_dir):
        ds = parse_tu_dataset(fixtures_dir / "MINI", "MINI")
        assert ds.num_classes == 2
        assert [g.label for g in ds.graphs] == [0, 1]
        assert ds.feature_kind == "degree_onehot"
        triangle, edge = ds.graphs
        assert triangle.graph.num_nodes == 3 and triangle.graph.num_edges == 3
        assert edge.graph.num_nodes == 2 and edge.graph.num_edges == 1
        assert triangle.features.shape[1] == edge.features.shape[1]

    def test_missing_file_reports_name(self, tmp_path):
        write_corpus(tmp_path, "X", {"A": "1, 2\n2, 1\n", "graph_indicator": "1\n1\n"})
        with pytest.raises(DatasetFormatError, match="X_graph_labels.txt"):
            parse_tu_dataset(tmp_path, "X")

    def test_out_of_range_edge_reports_line(self, tmp_path):
        write_corpus(
            tmp_path,
            "X",
            {
                "A": "1, 2\n2, 1\n5, 1\n",
                "graph_indicator": "1\n1\n1\n1\n",
                "graph_labels": "1\n",
            },
        )
        with pytest.raises(DatasetFormatError, match=r"X_A.txt:3"):
            parse_tu_dataset(tmp_path, "X")

    def test_non_integer_reports_line(self, tmp_path):
        write_corpus(
            tmp_path,
            "X",
            {"A": "1, 2\n2, 1\n", "graph_indicator": "1\nfoo\n", "graph_labels": "1\n"},
        )
        with pytest.raises(DatasetFormatError, match=r"X_graph_indicator.txt:2"):
            parse_tu_dataset(tmp_path, "X")

    def test_cross_graph_edge_rejected(self, tmp_path):
        write_corpus(
            tmp_path,
            "X",
            {
                "A": "1, 2\n2, 1\n2, 3\n3, 2\n",
                "graph_indicator": "1\n1\n2\n",
                "graph_labels": "1\n2\n",
            },
        )
        with pytest.raises(DatasetFormatError, match="crosses graphs"):
            parse_tu_dataset(tmp_path, "X")

    def test_self_loop_rejected_with_line(self, tmp_path):
        write_corpus(
            tmp_path,
            "X",
            {"A": "1, 1\n", "graph_indicator": "1\n1\n", "graph_labels": "1\n"},
        )
        with pytest.raises(DatasetFormatError, match=r"X_A.txt:1.*self-loop"):
            parse_tu_dataset(tmp_path, "X")

    def test_duplicate_edges_collapse(self, tmp_path):
        write_corpus(
            tmp_path,
            "X",
            {
                "A": "1, 2\n1, 2\n2, 1\n",
                "graph_indicator": "1\n1\n",
                "graph_labels": "4\n",
            },
        )
        ds = parse_tu_dataset(tmp_path, "X")
        assert ds.graphs[0].graph.num_edges == 1
        assert ds.graphs[0].label == 0  # labels remapped to [0, C)

    def test_zero_edge_graph_kept(self, tmp_path):
        write_corpus(
            tmp_path,
            "X",
            {
                "A": "1, 2\n2, 1\n",
                "graph_indicator": "1\n1\n2\n",
                "graph_labels": "1\n1\n",
            },
        )
        ds = parse_tu_dataset(tmp_path, "X")
        assert ds.graphs[1].graph.num_edges == 0

    def test_node_attributes_take_precedence(self, tmp_path):
        write_corpus(
            tmp_path,
            "X",
            {
                "A": "1, 2\n2, 1\n",
                "graph_indicator": "1\n1\n",
                "graph_labels": "1\n",
                "node_labels": "3\n5\n",
                "node_attributes": "0.25, -1.5\n2.0, 0.125\n",
            },
        )
        ds = parse_tu_dataset(tmp_path, "X")
        assert ds.feature_kind == "node_attributes"
        assert np.array_equal(ds.graphs[0].features, [[0.25, -1.5], [2.0, 0.125]])

    def test_node_labels_onehot_over_dataset_alphabet(self, tmp_path):
        write_corpus(
            tmp_path,
            "X",
            {
                "A": "1, 2\n2, 1\n",
                "graph_indicator": "1\n1\n2\n",
                "graph_labels": "1\n2\n",
                "node_labels": "7\n3\n7\n",
            },
        )
        ds = parse_tu_dataset(tmp_path, "X")
        assert ds.feature_kind == "node_labels_onehot"
        assert np.array_equal(ds.node_label_alphabet, [3, 7])
        assert np.array_equal(ds.graphs[0].features, [[0, 1], [1, 0]])
        assert np.array_equal(ds.graphs[1].features, [[0, 1]])

    def test_indicator_must_be_sorted(self, tmp_path):
        write_corpus(
            tmp_path,
            "X",
            {"A": "", "graph_indicator": "1\n2\n1\n", "graph_labels": "1\n2\n"},
        )
        with pytest.raises(DatasetFormatError, match="non-decreasing"):
            parse_tu_dataset(tmp_path, "X")

    def test_crlf_accepted(self, tmp_path):
        tmp_path.mkdir(exist_ok=True)
        (tmp_path / "X_A.txt").write_bytes(b"1, 2\r\n2, 1\r\n")
        (tmp_path / "X_graph_indicator.txt").write_bytes(b"1\r\n1\r\n")
        (tmp_path / "X_graph_labels.txt").write_bytes(b"1\r\n")
        ds = parse_tu_dataset(tmp_path, "X")
        assert ds.graphs[0].graph.num_edges == 1


class TestRoundTrip:
    def assert_same(self, a: Dataset, b: Dataset):
        assert a.num_classes == b.num_classes
        assert a.feature_kind == b.feature_kind
        assert len(a.graphs) == len(b.graphs)
        for ga, gb in zip(a.graphs, b.graphs):
            assert ga.label == gb.label
            assert np.array_equal(ga.graph.row_offsets, gb.graph.row_offsets)
            assert np.array_equal(ga.graph.col_indices, gb.graph.col_indices)
            assert np.array_equal(ga.features, gb.features)

    def test_degree_corpus(self, fixtures_dir, tmp_path):
        ds = parse_tu_dataset(fixtures_dir / "MINI", "MINI")
        write_tu_dataset(ds, tmp_path, "MINI")
        self.assert_same(ds, parse_tu_dataset(tmp_path, "MINI"))

    def test_attribute_corpus(self, tmp_path):
        rng = np.random.default_rng(0)
        graphs = []
        for i in range(4):
            g = random_graph(rng, int(rng.integers(2, 7)))
            graphs.append(LabeledGraph(g, rng.standard_normal((g.num_nodes, 3)), i % 2))
        ds = Dataset("ATTR", graphs, 2, "node_attributes")
        write_tu_dataset(ds, tmp_path / "attr")
        self.assert_same(ds, parse_tu_dataset(tmp_path / "attr", "ATTR"))

    def test_label_corpus(self, tmp_path):
        rng = np.random.default_rng(1)
        graphs, node_labels = [], []
        alphabet = np.array([2, 9])
        for i in range(3):
            g = random_graph(rng, int(rng.integers(2, 6)))
            raw = rng.choice(alphabet, size=g.num_nodes)
            onehot = np.zeros((g.num_nodes, 2))
            onehot[np.arange(g.num_nodes), np.searchsorted(alphabet, raw)] = 1.0
            graphs.append(LabeledGraph(g, onehot, i % 2 if i else 1))
            node_labels.append(raw)
        ds = Dataset("LAB", graphs, 2, "node_labels_onehot", node_labels, alphabet)
        write_tu_dataset(ds, tmp_path / "lab")
        self.assert_same(ds, parse_tu_dataset(tmp_path / "lab", "LAB"))

    def test_toy_corpus_is_canonical(self, fixtures_dir, tmp_path):
        ds = parse_tu_dataset(fixtures_dir / "TOY24", "TOY24")
        write_tu_dataset(ds, tmp_path, "TOY24")
        for suffix in ("_A.txt", "_graph_indicator.txt", "_graph_labels.txt"):
            original = (fixtures_dir / "TOY24" / f"TOY24{suffix}").read_bytes()
            rewritten = (tmp_path / f"TOY24{suffix}").read_bytes()
            assert original == rewritten


class TestDegreeBound:
    def test_explicit_override(self):
        assert degree_feature_bound([], max_degree=17) == 17

    def test_percentile_clamped_low(self):
        g = from_edge_list(2, [(0, 1)])
        assert degree_feature_bound([g]) == 1

    def test_percentile_of_regular_graph(self):
        k6 = from_edge_list(6, [(i, j) for i in range(6) for j in range(i + 1, 6)])
        assert degree_feature_bound([k6]) == 5

    def test_outlier_hub_is_ignored(self):
        hub = from_edge_list(41, [(0, i) for i in range(1, 41)])
        # one degree-40 hub among forty leaves: the 95th percentile stays at 1
        assert degree_feature_bound([hub]) == 1

    def test_rejects_bad_override(self):
        with pytest.raises(ValueError):
            degree_feature_bound([], max_degree=0)


class TestStratifiedKFold:
    def test_balanced_two_class_ten_fold(self):
        labels = np.array([0, 1] * 10)
        splits = stratified_kfold(labels, folds=10, seed=3)
        for split in splits:
            assert split.test_indices.size == 2
            assert sorted(labels[split.test_indices]) == [0, 1]

    def test_rejects_single_fold(self):
        with pytest.raises(ValueError, match="folds"):
            stratified_kfold(np.zeros(10, dtype=int), folds=1)

    def test_rejects_small_class(self):
        labels = np.array([0] * 12 + [1] * 3)
        with pytest.raises(ValueError, match="class 1"):
            stratified_kfold(labels, folds=10)

    def test_deterministic(self):
        labels = np.array([0, 1, 2] * 20)
        a = stratified_kfold(labels, folds=5, seed=42)
        b = stratified_kfold(labels, folds=5, seed=42)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.test_indices, sb.test_indices)
        c = stratified_kfold(labels, folds=5, seed=43)
        assert any(
            not np.array_equal(sa.test_indices, sc.test_indices) for sa, sc in zip(a, c)
        )

    @given(st.integers(0, 200))
    def test_partition_and_proportions(self, seed):
        rng = np.random.default_rng(seed)
        folds = int(rng.integers(2, 6))
        counts = rng.integers(folds, 4 * folds, size=int(rng.integers(1, 4)))
        labels = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
        labels = labels[rng.permutation(labels.size)]
        splits = stratified_kfold(labels, folds=folds, seed=seed)
        all_test = np.concatenate([s.test_indices for s in splits])
        assert np.array_equal(np.sort(all_test), np.arange(labels.size))
        for split in splits:
            assert np.intersect1d(split.train_indices, split.test_indices).size == 0
            assert np.union1d(split.train_indices, split.test_indices).size == labels.size
            for cls, total in enumerate(counts):
                in_fold = int(np.sum(labels[split.test_indices] == cls))
                assert abs(in_fold - total / folds) <= 1
