import pytest

from sgnn.errors import DataError
from sgnn.labels import (
    CategoryLexicon,
    ImageAnnotation,
    build_label_set,
    duplication_count,
    fuse_score,
    load_label_set,
    mask_evidence,
    save_label_set,
    split_images,
    text_evidence,
)
from sgnn.numerics import RngStream

FOOD = CategoryLexicon(
    category="food",
    member_object_names=frozenset({"pizza", "apple", "cake"}),
    caption_terms=frozenset({"pizza", "eating", "meal", "food"}),
)


def ann(image_id="img1", area=100, instances=(), caption=()):
    return ImageAnnotation(
        image_id=image_id,
        image_area=area,
        instances=tuple(instances),
        caption=tuple(caption),
    )


class TestMaskEvidence:
    def test_no_matching_instances(self):
        a = ann(instances=[("dog", 40.0)])
        assert mask_evidence(a, FOOD) == 0.0

    def test_full_coverage(self):
        a = ann(instances=[("pizza", 100.0)])
        assert mask_evidence(a, FOOD) == 1.0

    def test_hand_arithmetic(self):
        a = ann(instances=[("pizza", 10.0), ("apple", 15.0), ("dog", 30.0)])
        assert mask_evidence(a, FOOD) == 0.25

    def test_overlapping_instances_clamped(self):
        a = ann(instances=[("pizza", 80.0), ("cake", 70.0)])
        assert mask_evidence(a, FOOD) == 1.0

    def test_zero_area_rejected_at_construction(self):
        with pytest.raises(DataError):
            ann(area=0)


class TestTextEvidence:
    def test_no_matches(self):
        assert text_evidence(ann(caption=["a", "dog", "runs"]), FOOD) == 0.0

    def test_single_matching_token(self):
        assert text_evidence(ann(caption=["pizza"]), FOOD) == 1.0

    def test_hand_arithmetic(self):
        caption = ["a", "meal", "with", "pizza", "on", "a", "red", "table"]
        assert text_evidence(ann(caption=caption), FOOD) == 0.25

    def test_empty_caption(self):
        assert text_evidence(ann(caption=[]), FOOD) == 0.0


class TestFuseScore:
    def test_hand_arithmetic(self):
        assert fuse_score(0.4, 0.6, 0.5) == 0.5

    def test_alpha_boundaries(self):
        assert fuse_score(0.3, 0.9, 1.0) == 0.3
        assert fuse_score(0.3, 0.9, 0.0) == 0.9

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            fuse_score(1.5, 0.5, 0.5)
        with pytest.raises(ValueError):
            fuse_score(0.5, -0.1, 0.5)
        with pytest.raises(ValueError):
            fuse_score(0.5, 0.5, 2.0)

    def test_monotone_in_mask_when_alpha_below_one(self, rng):
        for trial in range(200):
            r = rng.child(trial)
            t = r.uniform()
            alpha = r.uniform() * 0.999
            m1 = r.uniform()
            m2 = min(1.0, m1 + r.uniform() * (1.0 - m1))
            assert fuse_score(t, m2, alpha) >= fuse_score(t, m1, alpha)


class TestDuplicationCount:
    def test_examples(self):
        assert duplication_count(0.0) == 0
        assert duplication_count(0.34) == 3  # 3.4 rounds down
        assert duplication_count(0.35) == 4  # half rounds away from zero
        assert duplication_count(1.0) == 10

    def test_bounds_over_grid(self):
        for i in range(1001):
            n = duplication_count(i / 1000)
            assert 0 <= n <= 10

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            duplication_count(1.2)


class TestSplitImages:
    def test_exact_arithmetic_sizes(self):
        ids = [f"i{k}" for k in range(10)]
        assignment = split_images(ids, (0.8, 0.1, 0.1), RngStream(0))
        sizes = [list(assignment.values()).count(s) for s in ("train", "val", "test")]
        assert sizes == [8, 1, 1]

    def test_same_seed_identical(self):
        ids = [f"i{k}" for k in range(37)]
        a = split_images(ids, (0.7, 0.15, 0.15), RngStream(5))
        b = split_images(ids, (0.7, 0.15, 0.15), RngStream(5))
        assert a == b

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError):
            split_images(["a", "b", "a"], (0.8, 0.1, 0.1), RngStream(0))

    def test_no_leakage_over_1000_random_runs(self):
        # exhaustive-check oracle: each id lands in exactly one split and
        # every split size stays within one image of its quota
        master = RngStream(99)
        for trial in range(1000):
            r = master.child(trial)
            n = 5 + r.randbelow(40)
            ids = [f"im{k}" for k in range(n)]
            assignment = split_images(ids, (0.6, 0.2, 0.2), r)
            assert sorted(assignment) == sorted(ids)
            for split, quota in zip(("train", "val", "test"), (0.6, 0.2, 0.2)):
                count = sum(1 for s in assignment.values() if s == split)
                assert abs(count - n * quota) <= 1.0


class TestLabelSet:
    def _annotations(self, rng, count=40):
        anns = []
        for k in range(count):
            r = rng.child(k)
            has_food = r.uniform() < 0.6
            instances = [("pizza", 10.0 + 50.0 * r.uniform())] if has_food else []
            caption = ["meal"] if r.uniform() < 0.5 else ["tree"]
            anns.append(ann(image_id=f"img{k:03d}", instances=instances, caption=caption))
        return anns

    def test_scores_and_counts_in_range(self, rng):
        labels = build_label_set(
            self._annotations(rng), [FOOD], (0.8, 0.1, 0.1), rng.child("split")
        )
        for img in labels.images:
            for c in labels.categories:
                assert 0.0 <= img.score[c] <= 1.0
                assert 0 <= img.duplication[c] <= 10

    def test_roundtrip_through_file(self, rng, tmp_path):
        labels = build_label_set(
            self._annotations(rng), [FOOD], (0.8, 0.1, 0.1), rng.child("split")
        )
        path = tmp_path / "labels.json"
        save_label_set(labels, path)
        loaded = load_label_set(path)
        assert loaded.categories == labels.categories
        assert loaded.splits == labels.splits
        assert loaded.images[3].score == labels.images[3].score
        assert loaded.images[3].duplication == labels.images[3].duplication

    def test_alpha_override_applies(self, rng):
        anns = [ann(instances=[("pizza", 50.0)], caption=["tree", "tree"])]
        # text evidence 0, mask evidence 0.5: alpha=1 ignores the mask
        labels = build_label_set(
            anns, [FOOD], (0.4, 0.3, 0.3), rng, alpha_overrides={"food": 1.0}
        )
        assert labels.images[0].score["food"] == 0.0
        assert labels.alpha["food"] == 1.0
