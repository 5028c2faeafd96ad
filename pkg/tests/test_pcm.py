import numpy as np
import pytest

from mixlab.core import Context
from mixlab.errors import (
    CorruptCheckpointError,
    NonFiniteGradientError,
    ShapeMismatchError,
    VersionMismatchError,
)
from mixlab.gradcheck import run_gradcheck
from mixlab.pcm import (
    OptimizerState,
    PcmConfig,
    PcmParams,
    apply_update,
    checkpoint_from_json,
    checkpoint_to_json,
    init_params,
    pcm_backward,
    pcm_forward,
    unflatten,
    zeros_like_params,
)

CFG = PcmConfig(vocab_size=8, n_dims=4, embed_dim=5, window=4, hidden_dim=7, seed=42)


class TestInit:
    def test_deterministic(self):
        a, b = init_params(CFG), init_params(CFG)
        np.testing.assert_array_equal(a.flatten(), b.flatten())

    def test_biases_zero(self):
        p = init_params(CFG)
        assert np.all(p.b1 == 0.0)
        assert np.all(p.b2 == 0.0)

    def test_seeds_differ(self):
        cfg2 = PcmConfig(vocab_size=8, n_dims=4, embed_dim=5, window=4,
                         hidden_dim=7, seed=43)
        assert np.any(init_params(CFG).flatten() != init_params(cfg2).flatten())

    def test_flatten_round_trip(self):
        p = init_params(CFG)
        again = unflatten(CFG, p.flatten())
        np.testing.assert_array_equal(again.flatten(), p.flatten())


class TestForward:
    def test_zero_params_give_uniform(self):
        p = zeros_like_params(CFG)
        ctx = Context(prompt=(0, 2, 3))
        pref = np.array([1.0, 0.0, 1.0, 1.0])
        w = pcm_forward(p, ctx, pref, (0, 2, 3), CFG.window).weights
        np.testing.assert_allclose(w, 1.0 / 3.0, atol=1e-15)

    def test_single_active_dim(self):
        p = init_params(CFG)
        ctx = Context(prompt=(0, 5))
        w = pcm_forward(p, ctx, np.array([0, 1.0, 0, 0]), (1,), CFG.window).weights
        np.testing.assert_array_equal(w, [1.0])

    def test_simplex_property(self):
        p = init_params(CFG)
        ctx = Context(prompt=(0, 1, 2, 3, 4))
        pref = np.array([1.0, 1.0, 0, 1.0])
        w = pcm_forward(p, ctx, pref, (0, 1, 3), CFG.window).weights
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) <= 1e-12

    def test_pure_function(self):
        p = init_params(CFG)
        ctx = Context(prompt=(0, 6, 7))
        pref = np.array([1.0, 0, 1.0, 0])
        a = pcm_forward(p, ctx, pref, (0, 2), CFG.window).weights
        b = pcm_forward(p, ctx, pref, (0, 2), CFG.window).weights
        np.testing.assert_array_equal(a, b)

    def test_active_dim_permutation_equivariance(self):
        p = init_params(CFG)
        ctx = Context(prompt=(0, 3, 1))
        pref = np.array([1.0, 1.0, 1.0, 0])
        w = pcm_forward(p, ctx, pref, (0, 1, 2), CFG.window).weights
        w_perm = pcm_forward(p, ctx, pref, (2, 0, 1), CFG.window).weights
        np.testing.assert_allclose(w_perm, w[[2, 0, 1]], atol=1e-15)


class TestBackward:
    def test_zero_upstream_gives_zero_grad(self):
        p = init_params(CFG)
        ctx = Context(prompt=(0, 2))
        g = pcm_backward(p, ctx, np.array([1.0, 0, 1.0, 0]), (0, 2),
                         np.zeros(2), CFG.window)
        assert np.all(g.flatten() == 0.0)

    def test_unused_embedding_rows_zero_grad(self):
        p = init_params(CFG)
        ctx = Context(prompt=(0, 2, 3))
        g = pcm_backward(p, ctx, np.array([1.0, 0, 1.0, 0]), (0, 2),
                         np.array([1.0, -1.0]), CFG.window)
        used = {0, 2, 3}
        for tok in range(CFG.vocab_size):
            if tok not in used:
                assert np.all(g.emb[tok] == 0.0)

    def test_shape_mismatch(self):
        p = init_params(CFG)
        ctx = Context(prompt=(0,))
        with pytest.raises(ShapeMismatchError):
            pcm_backward(p, ctx, np.zeros(4), (0, 2), np.zeros(3), CFG.window)

    def test_finite_difference_agreement(self):
        assert run_gradcheck(n_cases=5, seed=9) <= 1e-4


class TestApplyUpdate:
    def test_zero_gradient_keeps_params(self):
        p = init_params(CFG)
        state = OptimizerState.fresh(CFG)
        p2, _ = apply_update(p, zeros_like_params(CFG), state, 0.1)
        np.testing.assert_array_equal(p2.flatten(), p.flatten())

    def test_zero_step_size_keeps_params(self):
        p = init_params(CFG)
        g = init_params(PcmConfig(vocab_size=8, n_dims=4, embed_dim=5,
                                  window=4, hidden_dim=7, seed=1))
        p2, _ = apply_update(p, g, OptimizerState.fresh(CFG), 0.0)
        np.testing.assert_array_equal(p2.flatten(), p.flatten())

    def test_quadratic_single_step(self):
        # f(theta) = theta^2 at theta=1, lr=0.1, no momentum -> 0.8
        p = zeros_like_params(CFG)
        p.b2[0] = 1.0
        g = zeros_like_params(CFG)
        g.b2[0] = 2.0 * p.b2[0]
        p2, _ = apply_update(p, g, OptimizerState.fresh(CFG, momentum=0.0), 0.1)
        assert p2.b2[0] == pytest.approx(0.8, abs=1e-15)

    def test_returns_new_objects(self):
        p = init_params(CFG)
        g = zeros_like_params(CFG)
        g.b1[0] = 1.0
        p2, _ = apply_update(p, g, OptimizerState.fresh(CFG), 0.1)
        assert p2 is not p
        assert p.b1[0] == 0.0  # input untouched

    def test_non_finite_gradient_rejected(self):
        p = init_params(CFG)
        g = zeros_like_params(CFG)
        g.w1[0, 0] = np.nan
        with pytest.raises(NonFiniteGradientError):
            apply_update(p, g, OptimizerState.fresh(CFG), 0.1)


class TestCheckpoint:
    def test_round_trip_bit_exact(self):
        p = init_params(CFG)
        text = checkpoint_to_json(p, CFG)
        p2, cfg2 = checkpoint_from_json(text)
        assert cfg2 == CFG
        np.testing.assert_array_equal(p2.flatten(), p.flatten())
        assert checkpoint_to_json(p2, cfg2) == text  # re-save byte-identical

    def test_version_mismatch(self):
        text = checkpoint_to_json(init_params(CFG), CFG).replace(
            '"format_version": 1', '"format_version": 99')
        with pytest.raises(VersionMismatchError):
            checkpoint_from_json(text)

    def test_truncated_file(self):
        text = checkpoint_to_json(init_params(CFG), CFG)
        with pytest.raises(CorruptCheckpointError):
            checkpoint_from_json(text[: len(text) // 2])

    def test_wrong_shape_checkpoint(self):
        other = PcmConfig(vocab_size=8, n_dims=4, embed_dim=6, window=4,
                          hidden_dim=7, seed=0)
        p = init_params(CFG)
        import json
        doc = json.loads(checkpoint_to_json(p, CFG))
        doc["config"]["embed_dim"] = other.embed_dim
        with pytest.raises(CorruptCheckpointError):
            checkpoint_from_json(json.dumps(doc))
