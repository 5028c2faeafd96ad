import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixlab.core import (
    Context,
    Dimension,
    DimensionRegistry,
    PreferenceSpec,
    Vocab,
    encode_preference,
    validate_dist,
)
from mixlab.errors import (
    BadSumError,
    DuplicateGroupError,
    LengthMismatchError,
    NegativeMassError,
    UnknownDimensionError,
)


def make_registry_6():
    return DimensionRegistry([
        Dimension(0, "d1a", 1, "A"),
        Dimension(1, "d1b", 1, "B"),
        Dimension(2, "d2a", 2, "A"),
        Dimension(3, "d2b", 2, "B"),
        Dimension(4, "d3a", 3, "A"),
        Dimension(5, "d3b", 3, "B"),
    ])


class TestValidateDist:
    def test_exact_simplex_point(self):
        p = validate_dist([0.5, 0.5], 2)
        np.testing.assert_array_equal(p, [0.5, 0.5])

    def test_tiny_deviation_within_tolerance(self):
        p = validate_dist([0.3, 0.3, 0.4000000001], 3)
        # independent summation check
        assert abs(sum(float(x) for x in p) - 1.0) <= 1e-9

    def test_renormalizes_small_deviation(self):
        raw = [0.3, 0.3, 0.4000005]
        p = validate_dist(raw, 3)
        assert abs(sum(float(x) for x in p) - 1.0) <= 1e-9
        expected = np.array(raw) / sum(raw)
        np.testing.assert_allclose(p, expected, rtol=0, atol=1e-15)

    def test_bad_sum(self):
        with pytest.raises(BadSumError):
            validate_dist([0.5, 0.6], 2)

    def test_negative_mass(self):
        with pytest.raises(NegativeMassError):
            validate_dist([1.1, -0.1], 2)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            validate_dist([1.0], 2)

    @given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=64))
    def test_normalized_vector_always_valid(self, raw):
        v = np.asarray(raw)
        p = validate_dist(v / v.sum(), len(v))
        assert p.min() >= 0
        assert abs(p.sum() - 1.0) <= 1e-9


class TestVocab:
    def test_rejects_tiny_vocab(self):
        with pytest.raises(ValueError):
            Vocab(size=1, bos_id=0, eos_id=0)

    def test_rejects_equal_bos_eos(self):
        with pytest.raises(ValueError):
            Vocab(size=4, bos_id=1, eos_id=1)

    def test_hash_stable_and_sensitive(self):
        v1 = Vocab(size=4, bos_id=0, eos_id=1)
        v2 = Vocab(size=4, bos_id=0, eos_id=1)
        v3 = Vocab(size=5, bos_id=0, eos_id=1)
        assert v1.hash() == v2.hash()
        assert v1.hash() != v3.hash()


class TestEncodePreference:
    def test_multi_hot(self):
        reg = make_registry_6()
        spec = PreferenceSpec(dims=(0, 2, 5))
        np.testing.assert_array_equal(
            encode_preference(spec, reg), [1, 0, 1, 0, 0, 1])

    def test_order_invariance(self):
        reg = make_registry_6()
        a = encode_preference(PreferenceSpec(dims=(0, 2, 5)), reg)
        b = encode_preference(PreferenceSpec(dims=(5, 2, 0)), reg)
        np.testing.assert_array_equal(a, b)

    def test_duplicate_group(self):
        reg = make_registry_6()
        with pytest.raises(DuplicateGroupError):
            encode_preference(PreferenceSpec(dims=(0, 1)), reg)

    def test_unknown_dimension(self):
        reg = make_registry_6()
        with pytest.raises(UnknownDimensionError):
            encode_preference(PreferenceSpec(dims=(0, 17)), reg)


class TestRegistry:
    def test_requires_dense_ids(self):
        with pytest.raises(ValueError):
            DimensionRegistry([Dimension(1, "x", 1, "A"), Dimension(2, "y", 1, "B")])

    def test_requires_opposing_pairs(self):
        with pytest.raises(ValueError):
            DimensionRegistry([Dimension(0, "x", 1, "A"), Dimension(1, "y", 1, "A")])

    def test_json_round_trip(self):
        reg = make_registry_6()
        again = DimensionRegistry.from_json(reg.to_json())
        assert again.to_json() == reg.to_json()
        assert again.dimensions == reg.dimensions


class TestContext:
    def test_requires_bos(self):
        v = Vocab(size=4, bos_id=0, eos_id=1)
        with pytest.raises(ValueError):
            Context(prompt=(2, 3)).validate(v)

    def test_eos_only_final(self):
        v = Vocab(size=4, bos_id=0, eos_id=1)
        Context(prompt=(0, 2), partial=(3, 1)).validate(v)
        with pytest.raises(ValueError):
            Context(prompt=(0, 2), partial=(1, 3)).validate(v)

    def test_tokens_and_last(self):
        c = Context(prompt=(0, 2), partial=(3,))
        assert c.tokens == (0, 2, 3)
        assert c.last == 3
