import csv

import pytest

from sgnn.explain import (
    RelevanceMap,
    aggregate_class_saliency,
    class_saliency,
    consistency,
    global_mask_relevance,
    save_edge_csv,
    save_node_csv,
    topk_edges,
)
from sgnn.graphs import SignedGraph, pearson, zscore_rows
from sgnn.model import ModelDims, forward, materialize_mask
from sgnn.numerics import Matrix
from sgnn.synth import default_harness_config, synth_dataset
from sgnn.training import TrainConfig, logit_input_gradients, train

from conftest import make_random_graph, make_random_params

DIMS = ModelDims(d1=5, d2=5, d_hidden=4)


class TestGlobalMaskRelevance:
    def test_symmetric_input_is_idempotent(self, rng):
        m = materialize_mask(rng.normal_matrix(5, 5).symmetrize())
        rmap = global_mask_relevance(m)
        assert rmap.edge_values.to_flat() == m.to_flat()

    def test_uniform_half_mask_node_values(self):
        rmap = global_mask_relevance(Matrix.full(4, 4, 0.5))
        assert rmap.node_values == [2.0, 2.0, 2.0, 2.0]

    def test_node_values_match_double_loop(self, rng):
        m = materialize_mask(rng.normal_matrix(6, 6).symmetrize())
        rmap = global_mask_relevance(m)
        for i in range(6):
            want = sum(rmap.edge_values[i, j] for j in range(6))
            assert abs(rmap.node_values[i] - want) < 1e-12

    def test_global_map_keeps_diagonal(self, rng):
        m = materialize_mask(rng.normal_matrix(4, 4).symmetrize())
        rmap = global_mask_relevance(m)
        assert rmap.edge_values[2, 2] == m[2, 2] != 0.0

    def test_global_relevance_nonnegative(self, rng):
        # mask entries live in (0, 1), so weighted degrees are positive
        m = materialize_mask(rng.normal_matrix(7, 7).symmetrize())
        rmap = global_mask_relevance(m)
        assert all(v > 0.0 for v in rmap.node_values)


class TestClassSaliency:
    def test_zero_adjacency_zero_saliency(self, rng):
        params = make_random_params(rng, 5, 3, DIMS)
        graph = SignedGraph(
            a_plus=Matrix.zeros(5, 5),
            a_minus=Matrix.zeros(5, 5),
            label=0,
            split="test",
        )
        rmap = class_saliency(params, graph, 1)
        assert rmap.edge_values.to_flat() == [0.0] * 25

    def test_symmetric_zero_diagonal_nonnegative(self, rng):
        params = make_random_params(rng, 6, 3, DIMS)
        for k in range(5):
            graph = make_random_graph(rng.child(k), 6)
            rmap = class_saliency(params, graph, k % 3)
            rmap.validate()
            assert all(v >= 0.0 for v in rmap.edge_values.to_flat())

    def test_locality_zero_input_entry_zero_saliency(self, rng):
        params = make_random_params(rng, 6, 3, DIMS)
        graph = make_random_graph(rng.child("g"), 6)
        rmap = class_saliency(params, graph, 0)
        for i in range(6):
            for j in range(6):
                if i != j and graph.a_plus[i, j] == 0.0 and graph.a_minus[i, j] == 0.0:
                    assert rmap.edge_values[i, j] == 0.0

    def test_logit_input_gradients_match_finite_differences(self, rng):
        params = make_random_params(rng, 5, 3, DIMS)
        graph = make_random_graph(rng.child("g"), 5)
        c = 2
        d_plus, d_minus, _ = logit_input_gradients(params, graph, c)
        h = 1e-5
        worst = 0.0
        for channel, analytic in (("a_plus", d_plus), ("a_minus", d_minus)):
            tensor = getattr(graph, channel)
            for i in range(5):
                for j in range(5):
                    def logit_with(delta):
                        g2 = SignedGraph(
                            a_plus=tensor.perturbed(i, j, delta) if channel == "a_plus" else graph.a_plus,
                            a_minus=tensor.perturbed(i, j, delta) if channel == "a_minus" else graph.a_minus,
                            label=graph.label,
                            split=graph.split,
                        )
                        return forward(g2, params).logits[0, c]

                    fd = (logit_with(h) - logit_with(-h)) / (2 * h)
                    rel = abs(fd - analytic[i, j]) / max(abs(fd), abs(analytic[i, j]), 1e-6)
                    worst = max(worst, rel)
        assert worst < 1e-4


class TestTopK:
    def _map_from(self, values: Matrix) -> RelevanceMap:
        rmap = RelevanceMap(
            kind="global",
            edge_values=values,
            node_values=values.row_sums(),
            top_edges=[],
        )
        return rmap

    def test_full_k_returns_all_edges_sorted(self, rng):
        values = rng.normal_matrix(5, 5).symmetrize()
        rmap = self._map_from(values)
        edges = topk_edges(rmap, 10)
        assert len(edges) == 10
        assert all(edges[i][2] >= edges[i + 1][2] for i in range(9))

    def test_tie_break_lexicographic(self):
        values = Matrix.from_rows(
            [[0.0, 0.5, 0.5], [0.5, 0.0, 0.2], [0.5, 0.2, 0.0]]
        )
        edges = topk_edges(self._map_from(values), 2)
        assert [(i, j) for i, j, _ in edges] == [(0, 1), (0, 2)]

    def test_k_too_large_rejected(self, rng):
        rmap = self._map_from(rng.normal_matrix(4, 4).symmetrize())
        with pytest.raises(ValueError):
            topk_edges(rmap, 7)

    def test_matches_sort_then_truncate_oracle(self, rng):
        for trial in range(100):
            r = rng.child(trial)
            p = 4 + r.randbelow(5)
            values = r.normal_matrix(p, p).symmetrize()
            rmap = self._map_from(values)
            k = 1 + r.randbelow(p * (p - 1) // 2)
            got = topk_edges(rmap, k)
            everything = [
                (i, j, values[i, j]) for i in range(p) for j in range(i + 1, p)
            ]
            want = sorted(everything, key=lambda e: (-e[2], e[0], e[1]))[:k]
            assert got == want


class TestConsistency:
    def test_identical_maps(self):
        maps = [[1.0, 2.0, 3.0, 4.0]] * 3
        corr, mean = consistency(maps)
        assert mean == 1.0
        assert all(corr[a, b] == 1.0 for a in range(3) for b in range(3))

    def test_negated_map(self):
        a = [1.0, 2.0, 3.0, 4.0]
        corr, mean = consistency([a, [-x for x in a]])
        assert abs(corr[0, 1] + 1.0) < 1e-12
        assert abs(mean + 1.0) < 1e-12

    def test_constant_map_defined_as_zero(self):
        corr, mean = consistency([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]])
        assert corr[0, 1] == 0.0 and corr[1, 1] == 0.0

    def test_matches_pearson_pipeline_on_stacked_vectors(self, rng):
        maps = [list(rng.child(k).normals(12)) for k in range(4)]
        corr, _ = consistency(maps)
        stacked = pearson(zscore_rows(Matrix.from_rows(maps)))
        for a in range(4):
            for b in range(4):
                assert abs(corr[a, b] - stacked[a, b]) < 1e-10


@pytest.fixture(scope="module")
def trained_small():
    cfg = default_harness_config(
        seed=4,
        num_parcels=12,
        timepoints=30,
        block_size=2,
        train_blocks=10,
        val_blocks=4,
        test_blocks=4,
        positive_edges=[[(0, 1), (2, 3)], [(4, 5), (6, 7)], [(8, 9), (10, 11)]],
        negative_edges=[[], [], []],
    )
    ds, truth, _ = synth_dataset(cfg)
    params, _ = train(
        ds, TrainConfig(dims=ModelDims(d1=16, d2=16, d_hidden=8), seed=4, max_epochs=25)
    )
    return params, ds, truth


class TestAggregatedSaliency:
    def test_class_maps_differ_for_disjoint_plants(self, trained_small):
        params, ds, truth = trained_small
        maps = [aggregate_class_saliency(params, ds, c) for c in range(3)]
        for a in range(3):
            for b in range(a + 1, 3):
                diff = (maps[a].edge_values - maps[b].edge_values).max_abs()
                assert diff > 0.0

    def test_aggregation_is_mean_of_singles(self, trained_small):
        params, ds, truth = trained_small
        graphs = [g for g in ds.by_split("test") if g.label == 0]
        singles = [class_saliency(params, g, 0) for g in graphs]
        # only-correct filtering may drop some; aggregate over all for the check
        agg = aggregate_class_saliency(params, ds, 0, only_correct=False)
        total = singles[0].edge_values
        for s in singles[1:]:
            total = total + s.edge_values
        want = total * (1.0 / len(singles))
        assert (agg.edge_values - want).max_abs() < 1e-12

    def test_unknown_split_or_empty_class_raises(self, trained_small):
        params, ds, _ = trained_small
        with pytest.raises(ValueError):
            aggregate_class_saliency(params, ds, 0, split="nope")


class TestCsvExports:
    def test_edge_and_node_files(self, rng, tmp_path):
        m = materialize_mask(rng.normal_matrix(4, 4).symmetrize())
        rmap = global_mask_relevance(m, k=3)
        save_edge_csv(rmap, tmp_path / "edges.csv")
        save_node_csv(rmap, tmp_path / "nodes.csv", {0: "areaA"})
        with (tmp_path / "edges.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["i", "j", "value"]
        assert len(rows) == 4
        i, j, value = rows[1]
        assert float(value) == rmap.top_edges[0][2]
        with (tmp_path / "nodes.csv").open() as fh:
            nrows = list(csv.reader(fh))
        assert nrows[0] == ["parcel_index", "parcel_name", "value"]
        assert nrows[1][1] == "areaA" and nrows[2][1] == ""
        assert len(nrows) == 5
