import math

import pytest

from sgnn.errors import DataError, ShapeError
from sgnn.graphs import (
    GraphDataset,
    TrialTimeSeries,
    assemble_dataset,
    block_concat,
    connectivity_graph,
    expand_trial_sequence,
    load_dataset,
    pearson,
    save_dataset,
    signed_split,
    zscore_rows,
)
from sgnn.labels import LabelSet, ScoredImage
from sgnn.numerics import Matrix

from _oracles import pearson_definitional
from conftest import make_random_graph


def trial(tid, data, image="img", subject="s1", order=0):
    return TrialTimeSeries(
        subject_id=subject, trial_id=tid, image_id=image, data=data, order=order
    )


class TestBlockConcat:
    def test_single_trial_identity(self, rng):
        t = trial("t0", rng.normal_matrix(4, 6))
        assert block_concat([t], 1).to_rows() == t.data.to_rows()

    def test_column_ordering(self):
        t1 = trial("t1", Matrix.from_rows([[1, 2, 3], [4, 5, 6]]))
        t2 = trial("t2", Matrix.from_rows([[7, 8, 9], [10, 11, 12]]))
        out = block_concat([t1, t2], 2)
        assert out.to_rows() == [[1, 2, 3, 7, 8, 9], [4, 5, 6, 10, 11, 12]]

    def test_roundtrip_slicing(self, rng):
        trials = [trial(f"t{k}", rng.child(k).normal_matrix(3, 5)) for k in range(4)]
        out = block_concat(trials, 4)
        for k, t in enumerate(trials):
            sliced = [row[5 * k : 5 * (k + 1)] for row in out.to_rows()]
            assert sliced == t.data.to_rows()

    def test_wrong_count_and_shape_rejected(self, rng):
        t1 = trial("t1", rng.normal_matrix(3, 5))
        t2 = trial("t2", rng.normal_matrix(3, 6))
        with pytest.raises(DataError):
            block_concat([t1], 2)
        with pytest.raises(ShapeError):
            block_concat([t1, t2], 2)


class TestZscoreRows:
    def test_definition_on_small_row(self):
        z = zscore_rows(Matrix.from_rows([[1.0, 2.0, 3.0]]))
        row = z.row(0)
        assert abs(sum(row)) < 1e-12
        var = sum(x * x for x in row) / 3
        assert abs(var - 1.0) < 1e-12

    def test_constant_row_maps_to_zeros(self):
        z = zscore_rows(Matrix.from_rows([[5.0, 5.0, 5.0], [1.0, 2.0, 3.0]]))
        assert z.row(0) == [0.0, 0.0, 0.0]

    def test_recomputation_oracle_random(self, rng):
        x = rng.normal_matrix(10, 50)
        z = zscore_rows(x)
        for i in range(10):
            row = z.row(i)
            mean = sum(row) / 50
            std = math.sqrt(sum((v - mean) ** 2 for v in row) / 50)
            assert abs(mean) < 1e-12
            assert abs(std - 1.0) < 1e-12

    def test_too_few_columns_rejected(self):
        with pytest.raises(DataError):
            zscore_rows(Matrix.from_rows([[1.0], [2.0]]))


class TestPearson:
    def test_identical_rows_fully_correlated(self):
        base = [1.0, -2.0, 0.5, 3.0, -1.0, 0.0]
        a = pearson(zscore_rows(Matrix.from_rows([base, list(base)])))
        assert a[0, 1] == 1.0

    def test_negated_row_anticorrelated(self):
        base = [1.0, -2.0, 0.5, 3.0, -1.0, 0.0]
        a = pearson(zscore_rows(Matrix.from_rows([base, [-x for x in base]])))
        assert a[0, 1] == -1.0

    def test_against_definitional_oracle(self, rng):
        x = rng.normal_matrix(6, 40)
        got = pearson(zscore_rows(x))
        want = pearson_definitional(x.to_rows())
        for i in range(6):
            for j in range(6):
                assert abs(got[i, j] - want[i][j]) < 1e-10

    def test_scale_invariance(self, rng):
        x = rng.normal_matrix(5, 60)
        a1 = pearson(zscore_rows(x))
        rows = x.to_rows()
        rows[2] = [v * 3.7 for v in rows[2]]  # common positive rescale
        a2 = pearson(zscore_rows(Matrix.from_rows(rows)))
        for i in range(5):
            for j in range(5):
                assert abs(a1[i, j] - a2[i, j]) < 1e-10

    def test_zero_variance_row_convention(self):
        x = Matrix.from_rows([[4.0] * 10, list(range(10)), [1, 4, 2, 8, 5, 7, 1, 3, 9, 0]])
        a = pearson(zscore_rows(x))
        assert a[0, 0] == 1.0
        assert a[0, 1] == 0.0 and a[1, 0] == 0.0 and a[0, 2] == 0.0

    def test_symmetric_and_clipped(self, rng):
        a = pearson(zscore_rows(rng.normal_matrix(8, 30)))
        assert a.is_symmetric(tol=0.0)
        assert all(-1.0 <= v <= 1.0 for v in a.to_flat())


class TestSignedSplit:
    def test_hand_example(self):
        a = Matrix.from_rows([[1.0, -0.5], [-0.5, 1.0]])
        plus, minus = signed_split(a)
        assert plus.to_rows() == [[1.0, 0.0], [0.0, 1.0]]
        assert minus.to_rows() == [[0.0, 0.5], [0.5, 0.0]]

    def test_nonnegative_input_empty_negative_channel(self, rng):
        a = rng.normal_matrix(4, 4).abs().symmetrize()
        plus, minus = signed_split(a)
        assert minus.to_flat() == [0.0] * 16
        assert plus.to_flat() == a.to_flat()

    def test_reconstruction_exact_on_random_matrices(self, rng):
        for k in range(100):
            a = pearson(zscore_rows(rng.child(k).normal_matrix(5, 20)))
            plus, minus = signed_split(a)
            assert (plus - minus).to_flat() == a.to_flat()
            # disjoint support
            assert all(p == 0.0 or m == 0.0 for p, m in zip(plus.to_flat(), minus.to_flat()))


def _manual_labels(counts_per_class, val=2, test=2):
    """LabelSet with the requested number of train images per class."""
    categories = [f"c{k}" for k in range(len(counts_per_class))]
    images, splits = [], {}
    for cls, n_train in enumerate(counts_per_class):
        for k in range(n_train + val + test):
            image_id = f"cls{cls}_img{k}"
            splits[image_id] = "train" if k < n_train else (
                "val" if k < n_train + val else "test"
            )
            score = {c: (0.1 if c == categories[cls] else 0.0) for c in categories}
            images.append(
                ScoredImage(
                    image_id=image_id,
                    mask_evidence=dict(score),
                    text_evidence=dict(score),
                    score=dict(score),
                    duplication={c: (1 if c == categories[cls] else 0) for c in categories},
                )
            )
    return LabelSet(
        categories=categories,
        alpha={c: 0.5 for c in categories},
        images=images,
        splits=splits,
    )


def _trials_for(labels, rng, p=4, t=8):
    trials = []
    for order, img in enumerate(labels.images):
        trials.append(
            trial(
                f"t_{img.image_id}",
                rng.child(order).normal_matrix(p, t),
                image=img.image_id,
                order=order,
            )
        )
    return trials


class TestAssembleDataset:
    def test_training_split_balanced_to_min_count(self, rng):
        labels = _manual_labels([30, 20, 25])
        trials = _trials_for(labels, rng)
        ds = assemble_dataset(trials, labels, 1, rng.child("bal"))
        assert ds.class_counts("train") == [20, 20, 20]
        # val/test untouched
        assert ds.class_counts("val") == [2, 2, 2]
        assert ds.class_counts("test") == [2, 2, 2]

    def test_block_size_exceeding_trials_errors(self, rng):
        labels = _manual_labels([3, 3, 3])
        trials = _trials_for(labels, rng)
        with pytest.raises(DataError):
            assemble_dataset(trials, labels, 50, rng.child("bal"))

    def test_every_graph_satisfies_invariants(self, rng):
        labels = _manual_labels([8, 6, 7], val=3, test=3)
        trials = _trials_for(labels, rng, p=5, t=10)
        ds = assemble_dataset(trials, labels, 2, rng.child("bal"))
        ds.validate()  # raises on any violated invariant
        for g in ds.graphs:
            g.validate()

    def test_duplication_rounds_order(self, rng):
        trials = [
            trial("t0", rng.normal_matrix(2, 4), image="a", order=0),
            trial("t1", rng.normal_matrix(2, 4), image="b", order=1),
            trial("t2", rng.normal_matrix(2, 4), image="c", order=2),
        ]
        seq = expand_trial_sequence(trials, {"a": 3, "b": 1, "c": 2})
        assert [t.image_id for t in seq] == ["a", "b", "c", "a", "c", "a"]


class TestGraphsFile:
    def _dataset(self, rng):
        graphs = []
        for k, split in enumerate(("train", "train", "val", "test")):
            g = make_random_graph(rng.child(k), parcels=4, label=k % 2, split=split)
            graphs.append(g)
        # keep the train split balanced across both labels
        return GraphDataset(graphs=graphs, num_parcels=4, num_classes=2,
                            class_names=["x", "y"])

    def test_roundtrip_bit_exact(self, rng, tmp_path):
        ds = self._dataset(rng)
        path = tmp_path / "graphs.bin"
        save_dataset(ds, path)
        loaded = load_dataset(path, class_names=["x", "y"])
        assert loaded.num_parcels == 4 and loaded.num_classes == 2
        assert len(loaded.graphs) == 4
        for a, b in zip(ds.graphs, loaded.graphs):
            assert a.label == b.label and a.split == b.split
            assert a.a_plus.to_flat() == b.a_plus.to_flat()
            assert a.a_minus.to_flat() == b.a_minus.to_flat()
        # identical bytes when rewritten
        path2 = tmp_path / "again.bin"
        save_dataset(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_truncated_file_rejected(self, rng, tmp_path):
        ds = self._dataset(rng)
        path = tmp_path / "graphs.bin"
        save_dataset(ds, path)
        (tmp_path / "cut.bin").write_bytes(path.read_bytes()[:-7])
        with pytest.raises(DataError):
            load_dataset(tmp_path / "cut.bin")

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "junk.bin").write_bytes(b"NOTSG" + b"\x00" * 40)
        with pytest.raises(DataError):
            load_dataset(tmp_path / "junk.bin")


class TestConnectivityGraph:
    def test_full_block_pipeline_invariants(self, rng):
        trials = [
            trial(f"t{k}", rng.child(k).normal_matrix(6, 10), image=f"im{k}", order=k)
            for k in range(3)
        ]
        g = connectivity_graph(trials, 3, label=1, split="val")
        g.validate()
        assert g.image_ids == ("im0", "im1", "im2")
