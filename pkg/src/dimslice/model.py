"""Toy decoder-only transformer: config, weights, and the forward pass.

The activation flow per block is pre-norm with residual connections:
RMSNorm -> grouped-query causal attention -> residual add -> RMSNorm ->
gated MLP (activation applied after the gate/up elementwise product) ->
residual add. Activations multiply weight matrices on the right (E @ W).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .linalg import Matrix, SeededRng, as_matrix, as_vector, silu

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    """Dimension algebra of the model.

    `h_attn * h_dim == d` is enforced at construction time; a config with
    `sliced=True` releases that tie (the residual stream was truncated while
    the attention-internal width stayed fixed).
    """

    d: int
    m: int
    h_attn: int
    h_dim: int
    v: int
    n_blocks: int
    vocab_size: int
    max_seq_len: int
    gamma: float = 0.0  # 0 means "default to 1/sqrt(h_dim)"
    sliced: bool = False

    def __post_init__(self):
        for name in ("d", "m", "h_attn", "h_dim", "v", "n_blocks", "vocab_size", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValidationError(f"config field {name} must be >= 1, got {getattr(self, name)}")
        if self.h_attn % self.v != 0:
            raise ValidationError(
                f"kv-head count v={self.v} must divide head count h_attn={self.h_attn}"
            )
        if not self.sliced and self.h_attn * self.h_dim != self.d:
            raise ValidationError(
                f"h_attn*h_dim must equal d: {self.h_attn}*{self.h_dim} != {self.d}"
            )
        if self.gamma == 0.0:
            object.__setattr__(self, "gamma", 1.0 / float(np.sqrt(self.h_dim)))
        if self.gamma <= 0.0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")


@dataclass
class BlockWeights:
    """Weights of one transformer block (shapes for the unsliced case).

    w_norm1: [d]        pre-attention RMSNorm weight
    w_q:     [d, h_attn*h_dim]
    w_k:     [d, v*h_dim]
    w_v:     [d, v*h_dim]
    w_o:     [h_attn*h_dim, d]
    w_norm2: [d]        pre-MLP RMSNorm weight
    w_gate:  [d, m]
    w_up:    [d, m]
    w_down:  [m, d]
    """

    w_norm1: np.ndarray
    w_q: Matrix
    w_k: Matrix
    w_v: Matrix
    w_o: Matrix
    w_norm2: np.ndarray
    w_gate: Matrix
    w_up: Matrix
    w_down: Matrix


@dataclass
class ModelWeights:
    embedding: Matrix  # [vocab_size, d]
    blocks: list[BlockWeights]
    w_norm_final: np.ndarray  # [d]
    unembedding: Matrix  # [d, vocab_size]


@dataclass
class ActivationTrace:
    """Residual-stream states captured during one forward pass.

    `block_inputs[i]` is the input of block i; `final_state` is the output of
    the last block, i.e. the state entering the final RMSNorm/unembedding.
    """

    block_inputs: list[Matrix] = field(default_factory=list)
    final_state: Matrix | None = None


def init_weights(config: ModelConfig, rng: SeededRng) -> ModelWeights:
    """Seeded Gaussian init (std 0.02) for projections, ones for norm weights."""
    hh = config.h_attn * config.h_dim
    vh = config.v * config.h_dim
    blocks = []
    for _ in range(config.n_blocks):
        blocks.append(
            BlockWeights(
                w_norm1=np.ones(config.d),
                w_q=rng.normal(config.d, hh, INIT_STD),
                w_k=rng.normal(config.d, vh, INIT_STD),
                w_v=rng.normal(config.d, vh, INIT_STD),
                w_o=rng.normal(hh, config.d, INIT_STD),
                w_norm2=np.ones(config.d),
                w_gate=rng.normal(config.d, config.m, INIT_STD),
                w_up=rng.normal(config.d, config.m, INIT_STD),
                w_down=rng.normal(config.m, config.d, INIT_STD),
            )
        )
    return ModelWeights(
        embedding=rng.normal(config.vocab_size, config.d, INIT_STD),
        blocks=blocks,
        w_norm_final=np.ones(config.d),
        unembedding=rng.normal(config.d, config.vocab_size, INIT_STD),
    )


def validate_weights(model: ModelWeights, config: ModelConfig) -> None:
    """Check every tensor shape against the config."""
    hh = config.h_attn * config.h_dim
    vh = config.v * config.h_dim
    d, m = config.d, config.m
    if len(model.blocks) != config.n_blocks:
        raise ShapeError(f"expected {config.n_blocks} blocks, got {len(model.blocks)}")
    expected = {"embedding": (config.vocab_size, d), "unembedding": (d, config.vocab_size)}
    for name, shape in expected.items():
        if getattr(model, name).shape != shape:
            raise ShapeError(f"{name} has shape {getattr(model, name).shape}, expected {shape}")
    if model.w_norm_final.shape != (d,):
        raise ShapeError(f"w_norm_final has shape {model.w_norm_final.shape}, expected ({d},)")
    per_block = {
        "w_norm1": (d,), "w_q": (d, hh), "w_k": (d, vh), "w_v": (d, vh),
        "w_o": (hh, d), "w_norm2": (d,), "w_gate": (d, m), "w_up": (d, m), "w_down": (m, d),
    }
    for i, block in enumerate(model.blocks):
        for name, shape in per_block.items():
            if getattr(block, name).shape != shape:
                raise ShapeError(
                    f"blocks[{i}].{name} has shape {getattr(block, name).shape}, expected {shape}"
                )


def copy_weights(model: ModelWeights) -> ModelWeights:
    return ModelWeights(
        embedding=model.embedding.copy(),
        blocks=[
            BlockWeights(**{
                f.name: getattr(b, f.name).copy() for f in dataclasses.fields(BlockWeights)
            })
            for b in model.blocks
        ],
        w_norm_final=model.w_norm_final.copy(),
        unembedding=model.unembedding.copy(),
    )


def rmsnorm_rows(e: Matrix, w: np.ndarray) -> Matrix:
    """Per-row RMS normalisation followed by the elementwise weight w."""
    e = as_matrix(e, "E")
    w = as_vector(w, "w")
    if e.shape[1] != w.shape[0]:
        raise ShapeError(f"norm weight length {w.shape[0]} does not match row width {e.shape[1]}")
    rms = np.sqrt(np.mean(e * e, axis=1, keepdims=True))
    if np.any(rms == 0.0):
        row = int(np.nonzero(rms.ravel() == 0.0)[0][0])
        raise ValidationError(f"rmsnorm of an all-zero row (row {row}) is undefined")
    return (e / rms) * w


def causal_softmax(scores: Matrix) -> Matrix:
    """Row softmax of a square score matrix with strictly-upper entries masked out."""
    l = scores.shape[0]
    masked = np.where(np.triu(np.ones((l, l), dtype=bool), k=1), -np.inf, scores)
    shifted = masked - masked.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def kv_group(head: int, config: ModelConfig) -> int:
    """Index of the key-value head serving query head `head`."""
    return (head * config.v) // config.h_attn


def attention(block: BlockWeights, e_norm: Matrix, config: ModelConfig) -> Matrix:
    """Grouped-query causal attention over normalised inputs, [l, d] out."""
    e_norm = as_matrix(e_norm, "E_norm")
    l = e_norm.shape[0]
    if l > config.max_seq_len:
        raise ValidationError(f"sequence length {l} exceeds max_seq_len {config.max_seq_len}")
    hd = config.h_dim
    q = e_norm @ block.w_q
    k = e_norm @ block.w_k
    v = e_norm @ block.w_v
    heads = []
    for i in range(config.h_attn):
        g = kv_group(i, config)
        q_i = q[:, i * hd:(i + 1) * hd]
        k_i = k[:, g * hd:(g + 1) * hd]
        v_i = v[:, g * hd:(g + 1) * hd]
        weights = causal_softmax(config.gamma * (q_i @ k_i.T))
        heads.append(weights @ v_i)
    return np.concatenate(heads, axis=1) @ block.w_o


def mlp(block: BlockWeights, a_norm: Matrix) -> Matrix:
    """Gated MLP; the activation is applied after the gate/up elementwise product."""
    a_norm = as_matrix(a_norm, "A_norm")
    if a_norm.shape[1] != block.w_gate.shape[0]:
        raise ShapeError(
            f"MLP input width {a_norm.shape[1]} does not match w_gate rows {block.w_gate.shape[0]}"
        )
    return silu((a_norm @ block.w_gate) * (a_norm @ block.w_up)) @ block.w_down


def block_forward(block: BlockWeights, e: Matrix, config: ModelConfig) -> Matrix:
    """One pre-norm block with residual connections."""
    e1 = e + attention(block, rmsnorm_rows(e, block.w_norm1), config)
    return e1 + mlp(block, rmsnorm_rows(e1, block.w_norm2))


def direct_sum(parts: list[Matrix]) -> np.ndarray:
    """Stack same-shape matrices into an [h, rows, cols] tensor."""
    if not parts:
        raise ValidationError("direct_sum needs at least one part")
    arrays = [as_matrix(p, f"parts[{i}]") for i, p in enumerate(parts)]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"direct_sum parts must share one shape, got {sorted(shapes)}")
    return np.stack(arrays, axis=0)


def _check_tokens(tokens, config: ModelConfig) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.shape[0] < 1:
        raise ValidationError("token sequence must be a non-empty 1-D array")
    if tokens.shape[0] > config.max_seq_len:
        raise ValidationError(
            f"sequence length {tokens.shape[0]} exceeds max_seq_len {config.max_seq_len}"
        )
    bad = np.nonzero((tokens < 0) | (tokens >= config.vocab_size))[0]
    if bad.size:
        pos = int(bad[0])
        raise ValidationError(
            f"token id {int(tokens[pos])} at position {pos} is outside vocabulary "
            f"of size {config.vocab_size}"
        )
    return tokens


def _check_adapters(adapters, config: ModelConfig):
    if adapters is None:
        return None
    if len(adapters) != config.n_blocks:
        raise ShapeError(f"expected {config.n_blocks} adapters, got {len(adapters)}")
    for i, a in enumerate(adapters):
        if a.shape != (config.d, config.d):
            raise ShapeError(f"adapter {i} has shape {a.shape}, expected ({config.d}, {config.d})")
    return adapters


def model_forward(model: ModelWeights, tokens, config: ModelConfig, adapters=None) -> Matrix:
    """Next-token logits [l, vocab_size] for one token sequence.

    `adapters`, when given, are [d, d] maps applied to the residual stream
    after each block (used by per-block sliced models).
    """
    tokens = _check_tokens(tokens, config)
    adapters = _check_adapters(adapters, config)
    e = model.embedding[tokens]
    for i, block in enumerate(model.blocks):
        e = block_forward(block, e, config)
        if adapters is not None:
            e = e @ adapters[i]
    return rmsnorm_rows(e, model.w_norm_final) @ model.unembedding


def capture_trace(model: ModelWeights, tokens, config: ModelConfig, adapters=None) -> ActivationTrace:
    """Forward pass that records each block's input and the final residual state."""
    tokens = _check_tokens(tokens, config)
    adapters = _check_adapters(adapters, config)
    trace = ActivationTrace()
    e = model.embedding[tokens]
    for i, block in enumerate(model.blocks):
        trace.block_inputs.append(e)
        e = block_forward(block, e, config)
        if adapters is not None:
            e = e @ adapters[i]
    trace.final_state = e
    return trace
