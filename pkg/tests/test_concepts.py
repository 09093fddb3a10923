import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptproto.concepts import (
    ConceptMask,
    ConceptSet,
    apply_mask,
    load_concepts,
    load_ground_truth_concepts,
    random_masks,
    select_top_masks,
    with_whole_input,
    write_concepts,
)
from conceptproto.errors import ConfigError, DataError, DimensionError
from conceptproto.rngs import child_rng


def mask_of(bits):
    return ConceptMask(id=0, name="m", bits=np.array(bits))


class TestApplyMask:
    def test_identity_mask(self):
        x = np.array([1.5, -2.0, 3.0])
        np.testing.assert_array_equal(apply_mask(x, mask_of([1, 1, 1])), x)

    def test_selector(self):
        out = apply_mask(np.array([5.0, 6.0, 7.0]), mask_of([0, 0, 1]))
        np.testing.assert_array_equal(out, [0, 0, 7])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=10)
        bits = rng.integers(0, 2, size=10)
        bits[0] = 1
        m = mask_of(bits)
        expected = np.array([x[i] if bits[i] else 0.0 for i in range(10)])
        np.testing.assert_array_equal(apply_mask(x, m), expected)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            apply_mask(np.zeros(4), mask_of([1, 0]))

    @given(st.integers(0, 100))
    @settings(max_examples=30, deadline=None)
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=6)
        bits = rng.integers(0, 2, size=6)
        bits[rng.integers(0, 6)] = 1
        m = mask_of(bits)
        once = apply_mask(x, m)
        np.testing.assert_array_equal(apply_mask(once, m), once)


class TestConceptSet:
    def test_rejects_empty(self):
        with pytest.raises(DataError):
            ConceptSet(masks=[], n_features=3)

    def test_rejects_all_zero_mask(self):
        with pytest.raises(DataError):
            mask_of([0, 0, 0])

    def test_accepts_overlapping_and_redundant(self):
        masks = [
            ConceptMask(id=0, name="a", bits=np.array([1, 1, 0])),
            ConceptMask(id=1, name="b", bits=np.array([0, 1, 1])),
            ConceptMask(id=2, name="dup", bits=np.array([1, 1, 0])),
        ]
        cs = ConceptSet(masks=masks, n_features=3)
        assert len(cs) == 3

    def test_hash_changes_with_content(self):
        cs1 = ConceptSet(masks=[mask_of([1, 0])], n_features=2)
        cs2 = ConceptSet(masks=[mask_of([0, 1])], n_features=2)
        assert cs1.content_hash() != cs2.content_hash()
        assert cs1.content_hash() == ConceptSet(masks=[mask_of([1, 0])], n_features=2).content_hash()


class TestWholeInput:
    def test_appends(self):
        masks = [mask_of([1, 0, 0]), mask_of([0, 1, 0]), mask_of([0, 0, 1])]
        cs = with_whole_input(ConceptSet(masks=masks, n_features=3))
        assert len(cs) == 4
        assert cs.masks[-1].is_whole_input()
        assert cs.masks[-1].name == "whole_input"

    def test_idempotent(self):
        cs = ConceptSet(masks=[mask_of([1, 0])], n_features=2)
        once = with_whole_input(cs)
        twice = with_whole_input(once)
        assert len(twice) == len(once) == 2

    def test_existing_all_ones_untouched(self):
        cs = ConceptSet(masks=[mask_of([1, 1])], n_features=2)
        assert with_whole_input(cs) is cs


class TestRandomMasks:
    def test_saturation(self):
        cs = random_masks(5, 3, 5, child_rng(0, "t"))
        for m in cs.masks:
            assert m.is_whole_input()

    def test_determinism(self):
        a = random_masks(20, 10, 4, child_rng(9, "m"))
        b = random_masks(20, 10, 4, child_rng(9, "m"))
        assert a.content_hash() == b.content_hash()

    def test_popcount(self):
        cs = random_masks(30, 100, 7, child_rng(1, "m"))
        for m in cs.masks:
            assert m.bits.sum() == 7

    def test_bits_out_of_range(self):
        with pytest.raises(ConfigError):
            random_masks(5, 2, 6, child_rng(0, "x"))


class TestSelectTopMasks:
    def _set(self):
        return ConceptSet(
            masks=[mask_of([1, 0, 0]), mask_of([0, 1, 0]), mask_of([0, 0, 1])],
            n_features=3,
        )

    def test_keep_all_identity(self):
        cs = self._set()
        out = select_top_masks(cs, [0.3, 0.1, 0.2], 3)
        assert out.names() == cs.names()

    def test_direct_sort_keeps_order(self):
        cs = self._set()
        out = select_top_masks(cs, [0.1, 0.9, 0.5], 2)
        np.testing.assert_array_equal(out.masks[0].bits, [0, 1, 0])
        np.testing.assert_array_equal(out.masks[1].bits, [0, 0, 1])

    def test_tie_break_low_id(self):
        cs = self._set()
        out = select_top_masks(cs, [0.5, 0.5, 0.5], 1)
        np.testing.assert_array_equal(out.masks[0].bits, [1, 0, 0])

    def test_keep_out_of_range(self):
        with pytest.raises(ConfigError):
            select_top_masks(self._set(), [1, 2, 3], 0)

    @given(st.integers(0, 500))
    @settings(max_examples=30, deadline=None)
    def test_subset_property(self, seed):
        rng = np.random.default_rng(seed)
        cs = random_masks(12, 6, 3, rng)
        scores = rng.normal(size=6)
        keep = int(rng.integers(1, 7))
        out = select_top_masks(cs, scores, keep)
        assert len(out) == keep
        originals = {m.bits.tobytes() for m in cs.masks}
        for m in out.masks:
            assert m.bits.tobytes() in originals


class TestConceptFiles:
    def test_round_trip(self, tmp_path):
        cs = random_masks(15, 5, 4, child_rng(2, "f"))
        path = tmp_path / "concepts.txt"
        write_concepts(cs, path)
        back = load_concepts(path, 15)
        assert back.content_hash() == cs.content_hash()

    def test_duplicate_indices_rejected(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("bad: 1 2 2\n")
        with pytest.raises(DataError, match="duplicate"):
            load_concepts(path, 5)

    def test_index_out_of_range(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("bad: 0 9\n")
        with pytest.raises(DataError, match="out of range"):
            load_concepts(path, 5)

    def test_ground_truth_parsing(self, tmp_path):
        path = tmp_path / "gt.txt"
        path.write_text("cellA: go_1 go_2\ncellB: go_3\n")
        truth = load_ground_truth_concepts(path)
        assert truth == {"cellA": ["go_1", "go_2"], "cellB": ["go_3"]}
