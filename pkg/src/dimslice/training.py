"""Training loop for the toy model: tape-built forward, Adam/SGD, loss curve.

The graph builder mirrors model.model_forward op for op, so the recorded
loss agrees with the plain forward pass up to floating-point noise; a unit
test pins that consistency. Parameter tensors wrap the model arrays in
place, so optimizer steps update the caller's ModelWeights directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .autodiff import GradientTape, Tensor
from .errors import ValidationError
from .linalg import Matrix, SeededRng
from .model import ModelConfig, ModelWeights, kv_group

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

BLOCK_PARAM_NAMES = ("w_norm1", "w_q", "w_k", "w_v", "w_o", "w_norm2", "w_gate", "w_up", "w_down")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    steps: int
    batch_length: int
    seed: int
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValidationError(f"learning rate must not be negative, got {self.learning_rate}")
        if self.steps < 1 or self.batch_length < 1:
            raise ValidationError("steps and batch_length must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}; choose adam or sgd")


def cross_entropy_loss(logits: Matrix, targets) -> float:
    """Mean negative log-likelihood (natural log) of one target id per row."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ValidationError(f"need one target per logit row: {targets.shape} vs {logits.shape}")
    if np.any((targets < 0) | (targets >= logits.shape[1])):
        bad = int(np.nonzero((targets < 0) | (targets >= logits.shape[1]))[0][0])
        raise ValidationError(
            f"target id {int(targets[bad])} at position {bad} is outside the "
            f"{logits.shape[1]}-way logit rows"
        )
    lse = logsumexp(logits, axis=1)
    return float(np.mean(lse - logits[np.arange(logits.shape[0]), targets]))


def params_from_model(model: ModelWeights) -> dict[str, Tensor]:
    """Wrap every weight array in a Tensor; values are shared, not copied."""
    params: dict[str, Tensor] = {"embedding": Tensor(model.embedding)}
    for i, block in enumerate(model.blocks):
        for name in BLOCK_PARAM_NAMES:
            params[f"blocks.{i}.{name}"] = Tensor(getattr(block, name))
    params["w_norm_final"] = Tensor(model.w_norm_final)
    params["unembedding"] = Tensor(model.unembedding)
    return params


def _attention_graph(params, prefix: str, e_norm: Tensor, config: ModelConfig) -> Tensor:
    hd = config.h_dim
    q = e_norm @ params[f"{prefix}.w_q"]
    k = e_norm @ params[f"{prefix}.w_k"]
    v = e_norm @ params[f"{prefix}.w_v"]
    heads = []
    for i in range(config.h_attn):
        g = kv_group(i, config)
        q_i = ad.col_slice(q, i * hd, (i + 1) * hd)
        k_i = ad.col_slice(k, g * hd, (g + 1) * hd)
        v_i = ad.col_slice(v, g * hd, (g + 1) * hd)
        weights = ad.causal_row_softmax(ad.scale(q_i @ ad.transpose(k_i), config.gamma))
        heads.append(weights @ v_i)
    return ad.concat_cols(heads) @ params[f"{prefix}.w_o"]


def _mlp_graph(params, prefix: str, a_norm: Tensor) -> Tensor:
    gate = a_norm @ params[f"{prefix}.w_gate"]
    up = a_norm @ params[f"{prefix}.w_up"]
    return ad.silu(gate * up) @ params[f"{prefix}.w_down"]


def logits_graph(params: dict[str, Tensor], tokens, config: ModelConfig) -> Tensor:
    """Tape twin of model.model_forward (no adapters: training happens unsliced)."""
    e = ad.gather_rows(params["embedding"], tokens)
    for i in range(config.n_blocks):
        prefix = f"blocks.{i}"
        e1 = e + _attention_graph(params, prefix, ad.rmsnorm_rows(e, params[f"{prefix}.w_norm1"]), config)
        e = e1 + _mlp_graph(params, prefix, ad.rmsnorm_rows(e1, params[f"{prefix}.w_norm2"]))
    h = ad.rmsnorm_rows(e, params["w_norm_final"])
    return h @ params["unembedding"]


def loss_graph(params: dict[str, Tensor], tokens, targets, config: ModelConfig) -> Tensor:
    return ad.cross_entropy(logits_graph(params, tokens, config), targets)


class Sgd:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.value -= self.lr * grads[name]


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = params
        self.lr = lr
        self.t = 0
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = ADAM_BETA1 * self.m[name] + (1.0 - ADAM_BETA1) * g
            self.v[name] = ADAM_BETA2 * self.v[name] + (1.0 - ADAM_BETA2) * g * g
            p.value -= self.lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + ADAM_EPS)


def train(model: ModelWeights, corpus, config: ModelConfig, cfg: TrainConfig) -> list[float]:
    """Next-token training on random corpus windows; updates `model` in place.

    Returns the per-step loss curve. Deterministic given the seed.
    """
    corpus = np.asarray(corpus, dtype=np.int64)
    if corpus.ndim != 1:
        raise ValidationError("corpus must be a 1-D token array")
    if corpus.size <= cfg.batch_length:
        raise ValidationError(
            f"corpus length {corpus.size} must exceed batch length {cfg.batch_length}"
        )
    if cfg.batch_length > config.max_seq_len:
        raise ValidationError(
            f"batch length {cfg.batch_length} exceeds max_seq_len {config.max_seq_len}"
        )
    params = params_from_model(model)
    tape = GradientTape(params)
    optimizer = Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else Sgd(params, cfg.learning_rate)
    rng = SeededRng(cfg.seed)
    n_starts = corpus.size - cfg.batch_length
    losses: list[float] = []
    for _ in range(cfg.steps):
        start = int(rng.integers(0, n_starts))
        window = corpus[start:start + cfg.batch_length + 1]
        loss = tape.forward(lambda p: loss_graph(p, window[:-1], window[1:], config))
        grads = tape.backward()
        optimizer.step(grads)
        losses.append(loss)
    return losses
