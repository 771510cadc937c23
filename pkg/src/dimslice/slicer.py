"""Residual-stream rotation and truncation of a trained model.

The pipeline is fold_norm_weights -> compute_rotation -> apply_rotation ->
slice_model. Folding absorbs RMSNorm weights into the matrices that consume
the normalised stream, which lets an orthogonal rotation Q commute with the
norms: the rotated model computes identical logits. Slicing then keeps the
leading `d_kept` rotated coordinates everywhere.

Because the per-row RMS divides by the mean square over the *current* width,
truncation alone would shrink every normalised row by sqrt(d_kept/d). That
constant is folded into the matrices that consume normalised rows, so a model
whose activations already live in the kept subspace is sliced losslessly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError, ValidationError
from .linalg import Matrix, second_moment, symmetric_eig
from .model import (
    ActivationTrace,
    BlockWeights,
    ModelConfig,
    ModelWeights,
    capture_trace,
    model_forward,
)

MODES = ("global", "per-block")


@dataclass(frozen=True)
class SparsityLevel:
    """A validated sparsity: d_kept == (1-s)*d is a positive integer."""

    s: float
    d: int
    d_kept: int


def validate_sparsity(d: int, s: float) -> SparsityLevel:
    """Check that (1-s)*d is a positive integer; never round silently."""
    if d < 1:
        raise ValidationError(f"dimension must be >= 1, got {d}")
    if not 0.0 <= s < 1.0:
        raise ValidationError(f"sparsity must lie in [0, 1), got {s}")
    kept_real = (1.0 - s) * d
    kept = int(round(kept_real))
    if kept < 1 or abs(kept_real - kept) > 1e-9:
        below = max(1, math.floor(kept_real))
        above = min(d, max(1, math.ceil(kept_real)))
        suggestions = sorted({1.0 - above / d, 1.0 - below / d})
        shown = " and ".join(f"s={v:g}" for v in suggestions)
        raise ValidationError(
            f"(1-s)*d = {kept_real:g} is not a positive integer for d={d}, s={s}; "
            f"nearest admissible values: {shown}"
        )
    return SparsityLevel(s=float(s), d=d, d_kept=kept)


@dataclass
class RotationPlan:
    """Orthogonal rotation(s) of the residual stream with their spectra.

    Global mode carries one [d, d] rotation; per-block mode carries
    n_blocks+1 of them (index 0 rotates the embedding output / block-0 input,
    index n_blocks rotates the final pre-unembedding state).
    """

    mode: str
    rotations: list[Matrix]
    spectra: list[np.ndarray]


@dataclass
class RotatedModel:
    """A rotated model plus, in per-block mode, the inter-block stream maps."""

    weights: ModelWeights
    adapters: list[Matrix] | None = None


@dataclass
class SlicedModel:
    """A truncated model with its reduced config and slicing provenance."""

    weights: ModelWeights
    config: ModelConfig
    level: SparsityLevel
    mode: str
    adapters: list[Matrix] | None = None

    def forward(self, tokens) -> Matrix:
        return model_forward(self.weights, tokens, self.config, adapters=self.adapters)

    def trace(self, tokens) -> ActivationTrace:
        return capture_trace(self.weights, tokens, self.config, adapters=self.adapters)


def fold_norm_weights(model: ModelWeights) -> ModelWeights:
    """Absorb each norm weight into the matrices consuming the normalised rows.

    Returns a model with all-ones norm vectors whose forward pass matches the
    input model. Folding an already-folded model is a no-op.
    """
    blocks = []
    for b in model.blocks:
        blocks.append(
            BlockWeights(
                w_norm1=np.ones_like(b.w_norm1),
                w_q=b.w_q * b.w_norm1[:, None],
                w_k=b.w_k * b.w_norm1[:, None],
                w_v=b.w_v * b.w_norm1[:, None],
                w_o=b.w_o.copy(),
                w_norm2=np.ones_like(b.w_norm2),
                w_gate=b.w_gate * b.w_norm2[:, None],
                w_up=b.w_up * b.w_norm2[:, None],
                w_down=b.w_down.copy(),
            )
        )
    return ModelWeights(
        embedding=model.embedding.copy(),
        blocks=blocks,
        w_norm_final=np.ones_like(model.w_norm_final),
        unembedding=model.unembedding * model.w_norm_final[:, None],
    )


def _require_folded(model: ModelWeights) -> None:
    vectors = [model.w_norm_final]
    for b in model.blocks:
        vectors.extend((b.w_norm1, b.w_norm2))
    if not all(np.all(v == 1.0) for v in vectors):
        raise ValidationError("model norms must be folded first (call fold_norm_weights)")


def _eig_rotation(pooled: Matrix) -> tuple[Matrix, np.ndarray]:
    eig = symmetric_eig(pooled)
    return eig.eigenvectors, eig.eigenvalues


def rotation_from_activations(samples: list[Matrix]) -> tuple[Matrix, np.ndarray]:
    """Eigenvector rotation of the pooled second moment of activation matrices."""
    if not samples:
        raise ValidationError("need at least one activation matrix")
    pooled = second_moment(samples[0])
    for x in samples[1:]:
        pooled = pooled + second_moment(x)
    return _eig_rotation(pooled)


def compute_rotation(
    model: ModelWeights,
    config: ModelConfig,
    calibration: list,
    mode: str = "global",
) -> RotationPlan:
    """Calibration-based rotation plan for a folded model.

    Global mode pools every block input across all calibration sequences into
    one second-moment statistic. Per-block mode computes one rotation per
    block input plus one for the final pre-unembedding state.
    """
    _require_folded(model)
    if mode not in MODES:
        raise ValidationError(f"unknown rotation mode {mode!r}; choose from {MODES}")
    if not calibration:
        raise ValidationError("calibration set must not be empty")
    traces = [capture_trace(model, seq, config) for seq in calibration]

    if mode == "global":
        pooled = [x for t in traces for x in t.block_inputs]
        q, spectrum = rotation_from_activations(pooled)
        return RotationPlan(mode=mode, rotations=[q], spectra=[spectrum])

    rotations, spectra = [], []
    for i in range(config.n_blocks):
        q, spectrum = rotation_from_activations([t.block_inputs[i] for t in traces])
        rotations.append(q)
        spectra.append(spectrum)
    q, spectrum = rotation_from_activations([t.final_state for t in traces])
    rotations.append(q)
    spectra.append(spectrum)
    return RotationPlan(mode=mode, rotations=rotations, spectra=spectra)


def _rotate_block(b: BlockWeights, q_in: Matrix, q_out: Matrix) -> BlockWeights:
    """Input-side matrices pick up q_in.T; stream-writing matrices pick up q_out."""
    return BlockWeights(
        w_norm1=b.w_norm1.copy(),
        w_q=q_in.T @ b.w_q,
        w_k=q_in.T @ b.w_k,
        w_v=q_in.T @ b.w_v,
        w_o=b.w_o @ q_out,
        w_norm2=b.w_norm2.copy(),
        w_gate=q_in.T @ b.w_gate,
        w_up=q_in.T @ b.w_up,
        w_down=b.w_down @ q_out,
    )


def apply_rotation(model: ModelWeights, plan: RotationPlan) -> RotatedModel:
    """Rotate the residual stream of a folded model; logits are unchanged.

    In per-block mode each block stays in its own rotation frame and the
    returned adapters (Q_i.T Q_{i+1}) move the stream between frames; the
    last adapter moves into the final-state frame used by the unembedding.
    """
    _require_folded(model)
    d = model.embedding.shape[1]
    n_blocks = len(model.blocks)
    expected = 1 if plan.mode == "global" else n_blocks + 1
    if len(plan.rotations) != expected:
        raise ShapeError(
            f"{plan.mode} plan must carry {expected} rotations, got {len(plan.rotations)}"
        )
    for i, q in enumerate(plan.rotations):
        if q.shape != (d, d):
            raise ShapeError(f"rotation {i} has shape {q.shape}, expected ({d}, {d})")

    if plan.mode == "global":
        q = plan.rotations[0]
        weights = ModelWeights(
            embedding=model.embedding @ q,
            blocks=[_rotate_block(b, q, q) for b in model.blocks],
            w_norm_final=model.w_norm_final.copy(),
            unembedding=q.T @ model.unembedding,
        )
        return RotatedModel(weights=weights, adapters=None)

    qs = plan.rotations
    weights = ModelWeights(
        embedding=model.embedding @ qs[0],
        blocks=[_rotate_block(b, qs[i], qs[i]) for i, b in enumerate(model.blocks)],
        w_norm_final=model.w_norm_final.copy(),
        unembedding=qs[n_blocks].T @ model.unembedding,
    )
    adapters = [qs[i].T @ qs[i + 1] for i in range(n_blocks)]
    return RotatedModel(weights=weights, adapters=adapters)


def slice_model(
    rotated: RotatedModel | ModelWeights,
    config: ModelConfig,
    level: SparsityLevel,
    mode: str = "global",
) -> SlicedModel:
    """Keep the first d_kept rotated coordinates of every stream-facing tensor.

    The attention-internal width h_attn*h_dim and the MLP width m are left
    untouched; the reduced config releases the h_attn*h_dim == d tie.
    """
    if isinstance(rotated, ModelWeights):
        rotated = RotatedModel(weights=rotated, adapters=None)
    model = rotated.weights
    if mode not in MODES:
        raise ValidationError(f"unknown rotation mode {mode!r}; choose from {MODES}")
    if level.d != config.d:
        raise ValidationError(f"sparsity level is for d={level.d}, model has d={config.d}")
    _require_folded(model)
    k = level.d_kept
    # per-row RMS now averages over k entries instead of d; fold the correction
    # into every matrix that consumes normalised rows
    f = math.sqrt(config.d / k)
    blocks = [
        BlockWeights(
            w_norm1=np.ones(k),
            w_q=b.w_q[:k, :] * f,
            w_k=b.w_k[:k, :] * f,
            w_v=b.w_v[:k, :] * f,
            w_o=b.w_o[:, :k].copy(),
            w_norm2=np.ones(k),
            w_gate=b.w_gate[:k, :] * f,
            w_up=b.w_up[:k, :] * f,
            w_down=b.w_down[:, :k].copy(),
        )
        for b in model.blocks
    ]
    weights = ModelWeights(
        embedding=model.embedding[:, :k].copy(),
        blocks=blocks,
        w_norm_final=np.ones(k),
        unembedding=model.unembedding[:k, :] * f,
    )
    adapters = None
    if rotated.adapters is not None:
        adapters = [a[:k, :k].copy() for a in rotated.adapters]
    sliced_config = replace(config, d=k, sliced=True)
    return SlicedModel(weights=weights, config=sliced_config, level=level, mode=mode, adapters=adapters)


def slice_pipeline(
    model: ModelWeights,
    config: ModelConfig,
    calibration: list,
    level: SparsityLevel,
    mode: str = "global",
) -> SlicedModel:
    """fold -> compute rotation -> rotate -> slice, in one call."""
    folded = fold_norm_weights(model)
    plan = compute_rotation(folded, config, calibration, mode=mode)
    rotated = apply_rotation(folded, plan)
    return slice_model(rotated, config, level, mode=mode)
