import numpy as np
import pytest

from dimslice.errors import ShapeError, ValidationError
from dimslice.linalg import SeededRng, random_orthogonal
from dimslice.model import ModelConfig, init_weights, model_forward
from dimslice.slicer import (
    RotationPlan,
    apply_rotation,
    compute_rotation,
    fold_norm_weights,
    rotation_from_activations,
    slice_model,
    slice_pipeline,
    validate_sparsity,
)
from conftest import rel_dev


def calib_for(config, n=6, length=32):
    return [SeededRng(100 + i).integers(0, config.vocab_size, size=length) for i in range(n)]


def assert_models_equal(a, b):
    assert np.array_equal(a.embedding, b.embedding)
    assert np.array_equal(a.w_norm_final, b.w_norm_final)
    assert np.array_equal(a.unembedding, b.unembedding)
    for ba, bb in zip(a.blocks, b.blocks):
        for name in ("w_norm1", "w_q", "w_k", "w_v", "w_o", "w_norm2", "w_gate", "w_up", "w_down"):
            assert np.array_equal(getattr(ba, name), getattr(bb, name)), name


class TestValidateSparsity:
    def test_quarter_of_sixteen(self):
        level = validate_sparsity(16, 0.25)
        assert level.d_kept == 12

    def test_inadmissible_suggests_neighbours(self):
        with pytest.raises(ValidationError) as err:
            validate_sparsity(10, 0.33)
        assert "s=0.3" in str(err.value) and "s=0.4" in str(err.value)

    def test_large_model_regime(self):
        assert validate_sparsity(4096, 0.5).d_kept == 2048

    def test_zero_sparsity(self):
        assert validate_sparsity(16, 0.0).d_kept == 16

    def test_rejects_one(self):
        with pytest.raises(ValidationError):
            validate_sparsity(16, 1.0)

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            validate_sparsity(16, -0.1)

    def test_rejects_everything_pruned(self):
        with pytest.raises(ValidationError):
            validate_sparsity(10, 0.95)


class TestFoldNormWeights:
    def test_all_ones_is_identity(self, toy_config):
        model = init_weights(toy_config, SeededRng(1))
        assert_models_equal(fold_norm_weights(model), model)

    def test_forward_equivalence(self, toy_config, toy_model):
        tokens = SeededRng(2).integers(0, toy_config.vocab_size, size=12)
        base = model_forward(toy_model, tokens, toy_config)
        folded = fold_norm_weights(toy_model)
        assert rel_dev(model_forward(folded, tokens, toy_config), base) < 1e-10
        assert all(np.all(b.w_norm1 == 1.0) and np.all(b.w_norm2 == 1.0) for b in folded.blocks)
        assert np.all(folded.w_norm_final == 1.0)

    def test_idempotent(self, toy_model):
        once = fold_norm_weights(toy_model)
        assert_models_equal(fold_norm_weights(once), once)


class TestComputeRotation:
    def test_axis_aligned_gives_identity(self):
        # activations with exactly descending, axis-aligned column energy
        x = np.diag([3.0, 2.0, 1.0])
        q, spectrum = rotation_from_activations([x])
        assert np.array_equal(q, np.eye(3))
        assert np.array_equal(spectrum, [9.0, 4.0, 1.0])

    def test_isotropic_spectrum_is_flat(self):
        x = SeededRng(3).normal(10_000, 8)
        _, spectrum = rotation_from_activations([x])
        assert spectrum[0] / spectrum[-1] < 1.5

    def test_emitted_rotation_is_orthogonal(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        plan = compute_rotation(folded, toy_config, calib_for(toy_config))
        q = plan.rotations[0]
        assert np.max(np.abs(q @ q.T - np.eye(toy_config.d))) < 1e-10
        assert np.all(np.diff(plan.spectra[0]) <= 1e-9)

    def test_per_block_count(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        plan = compute_rotation(folded, toy_config, calib_for(toy_config), mode="per-block")
        assert len(plan.rotations) == toy_config.n_blocks + 1
        assert len(plan.spectra) == toy_config.n_blocks + 1

    def test_rejects_empty_calibration(self, toy_config, toy_model):
        with pytest.raises(ValidationError, match="calibration"):
            compute_rotation(fold_norm_weights(toy_model), toy_config, [])

    def test_rejects_unfolded_model(self, toy_config, toy_model):
        with pytest.raises(ValidationError, match="folded"):
            compute_rotation(toy_model, toy_config, calib_for(toy_config))

    def test_rejects_unknown_mode(self, toy_config, toy_model):
        with pytest.raises(ValidationError, match="mode"):
            compute_rotation(fold_norm_weights(toy_model), toy_config,
                             calib_for(toy_config), mode="fancy")


class TestApplyRotation:
    def test_identity_rotation_is_noop(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        plan = RotationPlan(mode="global", rotations=[np.eye(toy_config.d)],
                            spectra=[np.ones(toy_config.d)])
        rotated = apply_rotation(folded, plan)
        assert_models_equal(rotated.weights, folded)
        assert rotated.adapters is None

    def test_forward_equivalence(self, toy_config, toy_model):
        config = ModelConfig(d=16, m=32, h_attn=2, h_dim=8, v=2, n_blocks=2,
                             vocab_size=40, max_seq_len=64)
        folded = fold_norm_weights(toy_model)
        plan = RotationPlan(mode="global", rotations=[random_orthogonal(16, SeededRng(5))],
                            spectra=[np.ones(16)])
        rotated = apply_rotation(folded, plan)
        tokens = SeededRng(6).integers(0, config.vocab_size, size=5)
        base = model_forward(folded, tokens, config)
        assert rel_dev(model_forward(rotated.weights, tokens, config), base) < 1e-8

    def test_rotate_then_inverse_restores(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        q = random_orthogonal(toy_config.d, SeededRng(7))
        plan = RotationPlan("global", [q], [np.ones(toy_config.d)])
        inverse = RotationPlan("global", [q.T.copy()], [np.ones(toy_config.d)])
        restored = apply_rotation(apply_rotation(folded, plan).weights, inverse).weights
        assert np.max(np.abs(restored.embedding - folded.embedding)) < 1e-10
        for ba, bb in zip(restored.blocks, folded.blocks):
            assert np.max(np.abs(ba.w_q - bb.w_q)) < 1e-10
            assert np.max(np.abs(ba.w_o - bb.w_o)) < 1e-10
        assert np.max(np.abs(restored.unembedding - folded.unembedding)) < 1e-10

    def test_shape_mismatch_rejected(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        plan = RotationPlan("global", [np.eye(toy_config.d + 1)], [np.ones(toy_config.d + 1)])
        with pytest.raises(ShapeError):
            apply_rotation(folded, plan)

    def test_per_block_adapters(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        plan = compute_rotation(folded, toy_config, calib_for(toy_config), mode="per-block")
        rotated = apply_rotation(folded, plan)
        assert len(rotated.adapters) == toy_config.n_blocks
        tokens = SeededRng(8).integers(0, toy_config.vocab_size, size=7)
        base = model_forward(folded, tokens, toy_config)
        out = model_forward(rotated.weights, tokens, toy_config, adapters=rotated.adapters)
        assert rel_dev(out, base) < 1e-8


class TestSliceModel:
    def test_zero_sparsity_identity(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        plan = compute_rotation(folded, toy_config, calib_for(toy_config))
        rotated = apply_rotation(folded, plan)
        sliced = slice_model(rotated, toy_config, validate_sparsity(toy_config.d, 0.0))
        assert_models_equal(sliced.weights, rotated.weights)
        assert sliced.config.d == toy_config.d

    def test_shapes_after_quarter_slice(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        plan = compute_rotation(folded, toy_config, calib_for(toy_config))
        rotated = apply_rotation(folded, plan)
        sliced = slice_model(rotated, toy_config, validate_sparsity(16, 0.25))
        k = 12
        assert sliced.weights.embedding.shape == (toy_config.vocab_size, k)
        assert sliced.weights.unembedding.shape == (k, toy_config.vocab_size)
        for b in sliced.weights.blocks:
            assert b.w_q.shape == (k, 16)
            assert b.w_k.shape == (k, 16)
            assert b.w_o.shape == (16, k)
            assert b.w_gate.shape == (k, 32)
            assert b.w_down.shape == (32, k)
        assert sliced.config.d == k and sliced.config.sliced

    def test_low_rank_activations_slice_losslessly(self):
        config = ModelConfig(d=16, m=32, h_attn=2, h_dim=8, v=1, n_blocks=2,
                             vocab_size=40, max_seq_len=64)
        model = init_weights(config, SeededRng(1))
        for b in model.blocks:
            b.w_o = np.zeros_like(b.w_o)
            b.w_down = np.zeros_like(b.w_down)
        rng = SeededRng(2)
        basis = random_orthogonal(16, rng)[:, :8]
        model.embedding = rng.normal(40, 8) @ basis.T  # rows live in an 8-dim subspace
        tokens = SeededRng(11).integers(0, 40, size=24)
        base = model_forward(model, tokens, config)
        sliced = slice_pipeline(model, config, calib_for(config), validate_sparsity(16, 0.5))
        assert rel_dev(sliced.forward(tokens), base) < 1e-6


class TestPipelineInvariants:
    def test_computational_invariance_any_orthogonal_plan(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        for seed in (1, 2, 3):
            plan = RotationPlan("global", [random_orthogonal(toy_config.d, SeededRng(seed))],
                                [np.ones(toy_config.d)])
            sliced = slice_model(apply_rotation(folded, plan), toy_config,
                                 validate_sparsity(toy_config.d, 0.0))
            tokens = SeededRng(40 + seed).integers(0, toy_config.vocab_size, size=10)
            base = model_forward(toy_model, tokens, toy_config)
            assert rel_dev(sliced.forward(tokens), base) < 1e-8

    def test_per_block_zero_sparsity_invariance(self, toy_config, toy_model):
        tokens = SeededRng(44).integers(0, toy_config.vocab_size, size=10)
        base = model_forward(toy_model, tokens, toy_config)
        sliced = slice_pipeline(toy_model, toy_config, calib_for(toy_config),
                                validate_sparsity(toy_config.d, 0.0), mode="per-block")
        assert sliced.adapters is not None
        assert rel_dev(sliced.forward(tokens), base) < 1e-8

    def test_per_block_sliced_model_evaluates(self, toy_config, toy_model):
        from dimslice.metrics import token_perplexity

        tokens = SeededRng(46).integers(0, toy_config.vocab_size, size=30)
        sliced = slice_pipeline(toy_model, toy_config, calib_for(toy_config),
                                validate_sparsity(toy_config.d, 0.0), mode="per-block")
        base = token_perplexity(toy_model, tokens, toy_config)
        pruned = token_perplexity(sliced, tokens)
        assert abs(pruned.ppl - base.ppl) / base.ppl < 1e-8
        assert pruned.token_count == base.token_count

    def test_monotone_spectrum_capture(self, toy_config, toy_model):
        folded = fold_norm_weights(toy_model)
        plan = compute_rotation(folded, toy_config, calib_for(toy_config))
        captured = np.cumsum(plan.spectra[0])
        assert np.all(np.diff(captured) >= -1e-10)

    def test_slicing_commutes_with_vocab_permutation(self, toy_config, toy_model):
        perm = SeededRng(45).permutation(toy_config.vocab_size)
        inv = np.argsort(perm)
        model2 = init_weights(toy_config, SeededRng(7))
        model2.embedding = toy_model.embedding[perm]
        model2.blocks = toy_model.blocks
        model2.w_norm_final = toy_model.w_norm_final
        model2.unembedding = toy_model.unembedding[:, perm]

        calib = calib_for(toy_config)
        calib2 = [inv[seq] for seq in calib]
        level = validate_sparsity(toy_config.d, 0.25)
        sliced = slice_pipeline(toy_model, toy_config, calib, level)
        sliced2 = slice_pipeline(model2, toy_config, calib2, level)
        assert np.array_equal(sliced2.weights.embedding, sliced.weights.embedding[perm])
        assert np.array_equal(sliced2.weights.unembedding, sliced.weights.unembedding[:, perm])
