import numpy as np
import pytest

from mixlab.core import Context
from mixlab.testbed import (
    BOS,
    CONSONANT_IDS,
    EOS,
    VOWEL_IDS,
    build_testbed,
    oracle_pair_check,
)


class TestConstruction:
    def test_eight_preferences_one_per_group(self, tb16):
        assert len(tb16.specs) == 8
        keys = {k for k, _ in tb16.specs}
        assert len(keys) == 8
        for _, spec in tb16.specs:
            groups = [tb16.registry[d].group for d in spec.dims]
            assert sorted(groups) == [1, 2, 3]

    def test_deterministic_given_seed(self):
        a = build_testbed(seed=4, max_len=16)
        b = build_testbed(seed=4, max_len=16)
        np.testing.assert_array_equal(a.base, b.base)
        assert a.train_prompts == b.train_prompts
        assert a.heldout_prompts == b.heldout_prompts

    def test_train_heldout_disjoint(self, tb16):
        train = {p for _, p in tb16.train_prompts}
        held = {p for _, p in tb16.heldout_prompts}
        assert not train & held

    def test_prompts_start_with_bos(self, tb16):
        for _, p in tb16.train_prompts + tb16.heldout_prompts:
            Context(prompt=p).validate(tb16.vocab)

    def test_base_rows_never_emit_bos(self, tb16):
        assert np.all(tb16.base[:, BOS] == 0.0)

    def test_descriptor_json(self, tb16):
        import json
        doc = json.loads(tb16.to_json())
        assert doc["seed"] == 0
        assert len(doc["preferences"]) == 8


class TestRewardOracles:
    def test_bounded(self, tb16):
        rng = np.random.default_rng(0)
        x = tb16.train_prompts[0][1]
        for _ in range(100):
            y = tuple(int(t) for t in rng.integers(2, 32, size=rng.integers(1, 17)))
            for oracle in tb16.oracles.values():
                assert -1.0 <= oracle(x, y) <= 1.0

    def test_short_long_negation(self, tb16):
        x = tb16.train_prompts[0][1]
        y = (2, 3, 4, EOS)
        assert tb16.oracles[0](x, y) == -tb16.oracles[1](x, y)

    def test_short_at_max_len(self, tb16):
        x = tb16.train_prompts[0][1]
        y = tuple([2] * tb16.max_len)
        assert tb16.oracles[0](x, y) == -1.0

    def test_all_vowel_response(self, tb16):
        x = tb16.train_prompts[0][1]
        y = (VOWEL_IDS[0], VOWEL_IDS[3], EOS)
        assert tb16.oracles[2](x, y) == 1.0
        assert tb16.oracles[3](x, y) == 0.0

    def test_mixed_class_fraction(self, tb16):
        x = tb16.train_prompts[0][1]
        y = (VOWEL_IDS[0], CONSONANT_IDS[0], CONSONANT_IDS[1], EOS)
        assert tb16.oracles[2](x, y) == pytest.approx(1 / 3)

    def test_neutral_only_scores_zero_on_group2(self, tb16):
        x = tb16.train_prompts[0][1]
        y = (22, 23, EOS)
        assert tb16.oracles[2](x, y) == 0.0
        assert tb16.oracles[3](x, y) == 0.0

    def test_repeat_oracles_complementary(self, tb16):
        x = tb16.train_prompts[0][1]
        y = (2, 2, 3, 3, EOS)
        assert tb16.oracles[4](x, y) + tb16.oracles[5](x, y) == pytest.approx(1.0)
        all_same = (7, 7, 7, 7, EOS)
        assert tb16.oracles[4](x, all_same) == pytest.approx(1 / 3)
        all_distinct = (2, 3, 4, 5, EOS)
        assert tb16.oracles[4](x, all_distinct) == 1.0

    def test_short_response_repeat_zero(self, tb16):
        x = tb16.train_prompts[0][1]
        assert tb16.oracles[4](x, (2, EOS)) == 0.0


class TestExperts:
    def test_short_expert_boosts_eos(self, tb16):
        rng = np.random.default_rng(2)
        for _ in range(100):
            toks = (BOS,) + tuple(int(t) for t in rng.integers(2, 32, size=3))
            ctx = Context(prompt=toks)
            tilted = tb16.experts[0].next_dist(ctx)
            base_row = tb16.base[ctx.last]
            assert tilted[EOS] > base_row[EOS]

    def test_same_seed_bit_identical_experts(self):
        a = build_testbed(seed=9, max_len=16)
        b = build_testbed(seed=9, max_len=16)
        ctx = Context(prompt=a.train_prompts[0][1])
        for d in range(6):
            np.testing.assert_array_equal(
                a.experts[d].next_dist(ctx), b.experts[d].next_dist(ctx))


class TestDiagnostics:
    def test_oracle_pair_check_passes(self, tb16):
        diag = oracle_pair_check(tb16)
        for g, corr in diag["correlations"].items():
            assert corr <= -0.9
        for name, (own, base) in diag["self_decode_margins"].items():
            assert own >= base
