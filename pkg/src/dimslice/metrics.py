"""Entropy diagnostics, token-level perplexity, and multiple-choice accuracy.

The per-coordinate entropy kappa is estimated with the Gaussian plug-in
(closed form in the unbiased sample variance), in bits. The stacked-state
entropy is the bookkeeping product H = l * d * kappa, and the matching
state-level perplexity is kept in the log2 domain (2**H overflows for any
realistic l*d).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalError, ValidationError
from .linalg import Matrix, as_matrix
from .model import ModelConfig, ModelWeights, model_forward
from .slicer import SlicedModel


@dataclass(frozen=True)
class EntropyEstimate:
    """Per-coordinate entropy (bits) of an [l, d] state matrix."""

    kappa: float
    l: int
    d: int
    h_bits: float  # always stored as l * d * kappa


@dataclass(frozen=True)
class McItem:
    """One multiple-choice item, already tokenised."""

    context: np.ndarray
    choices: tuple
    gold_index: int

    def __post_init__(self):
        if len(self.choices) < 2:
            raise ValidationError("a multiple-choice item needs at least 2 choices")
        if not 0 <= self.gold_index < len(self.choices):
            raise ValidationError(
                f"gold index {self.gold_index} out of range for {len(self.choices)} choices"
            )
        if len(self.context) < 1:
            raise ValidationError("choice scoring needs a non-empty context")
        if any(len(c) < 1 for c in self.choices):
            raise ValidationError("choices must be non-empty token sequences")


@dataclass(frozen=True)
class PplResult:
    mean_nll: float  # nats per scored token
    ppl: float
    token_count: int


def kappa_gaussian(samples) -> float:
    """Gaussian plug-in entropy 0.5*log2(2*pi*e*var) of a scalar sample, bits."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValidationError(f"need at least 2 samples, got {x.size}")
    var = float(x.var(ddof=1))
    if var <= 0.0:
        raise NumericalError("zero sample variance: differential entropy is -inf")
    return 0.5 * math.log2(2.0 * math.pi * math.e * var)


def embedding_entropy(e: Matrix) -> EntropyEstimate:
    """Entropy of a state matrix under the i.i.d.-coordinate assumption.

    kappa is estimated from all l*d entries pooled; h_bits = l * d * kappa.
    """
    e = as_matrix(e, "E")
    l, d = e.shape
    kappa = kappa_gaussian(e.ravel())
    return EntropyEstimate(kappa=kappa, l=l, d=d, h_bits=l * d * kappa)


def log2_embedding_ppl(est: EntropyEstimate) -> float:
    """log2 of the state-level perplexity 2**H, i.e. H itself."""
    return est.h_bits


def entropy_ratio(e_sliced: Matrix, e: Matrix) -> float:
    """H(sliced states) / H(full states) for a column-sliced state matrix."""
    e_sliced = as_matrix(e_sliced, "E_sliced")
    e = as_matrix(e, "E")
    if e_sliced.shape[0] != e.shape[0]:
        raise ValidationError(
            f"row counts differ: {e_sliced.shape[0]} vs {e.shape[0]} (same sequence expected)"
        )
    if e_sliced.shape[1] > e.shape[1]:
        raise ValidationError("sliced matrix cannot be wider than the full matrix")
    h_full = embedding_entropy(e).h_bits
    if h_full == 0.0:
        raise NumericalError("full-state entropy is zero; ratio undefined")
    return embedding_entropy(e_sliced).h_bits / h_full


def _resolve(model, config: ModelConfig | None):
    """Accept either plain weights (with config) or a SlicedModel."""
    if isinstance(model, SlicedModel):
        return (lambda tokens: model.forward(tokens)), model.config
    if config is None:
        raise ValidationError("config is required when passing plain ModelWeights")
    return (lambda tokens: model_forward(model, tokens, config)), config


def _log_softmax(logits: Matrix) -> Matrix:
    return logits - logsumexp(logits, axis=1, keepdims=True)


def token_perplexity(model: ModelWeights | SlicedModel, tokens, config: ModelConfig | None = None) -> PplResult:
    """Causal next-token perplexity of one token sequence.

    Sequences longer than max_seq_len are split into non-overlapping chunks
    and combined by token-weighted averaging; the prediction across each
    chunk boundary is not scored.
    """
    forward, config = _resolve(model, config)
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 2:
        raise ValidationError("perplexity needs a 1-D sequence of at least 2 tokens")
    total_nll = 0.0
    total_count = 0
    for start in range(0, tokens.size, config.max_seq_len):
        chunk = tokens[start:start + config.max_seq_len]
        if chunk.size < 2:
            continue
        logp = _log_softmax(forward(chunk))
        positions = np.arange(chunk.size - 1)
        total_nll += float(-logp[positions, chunk[1:]].sum())
        total_count += chunk.size - 1
    mean_nll = total_nll / total_count
    return PplResult(mean_nll=mean_nll, ppl=math.exp(mean_nll), token_count=total_count)


def _choice_score(forward, context: np.ndarray, choice: np.ndarray, max_seq_len: int) -> float:
    seq = np.concatenate([context, choice])
    if seq.size > max_seq_len:
        raise ValidationError(
            f"context+choice length {seq.size} exceeds max_seq_len {max_seq_len}"
        )
    logp = _log_softmax(forward(seq))
    c = context.size
    positions = np.arange(c - 1, seq.size - 1)
    return float(logp[positions, seq[c:]].sum())


def mc_accuracy(model: ModelWeights | SlicedModel, items: list[McItem], config: ModelConfig | None = None) -> float:
    """Exact-match accuracy: argmax of summed choice-token log-probabilities.

    Ties break toward the lowest choice index.
    """
    if not items:
        raise ValidationError("mc_accuracy needs at least one item")
    forward, config = _resolve(model, config)
    hits = 0
    for item in items:
        scores = np.array([
            _choice_score(forward, item.context, np.asarray(c, dtype=np.int64), config.max_seq_len)
            for c in item.choices
        ])
        if int(np.argmax(scores)) == item.gold_index:
            hits += 1
    return hits / len(items)


def load_mc_items(path, vocab) -> list[McItem]:
    """Read a JSON-lines task file: {"context": str, "choices": [str], "gold": int}."""
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                context = obj["context"]
                choices = obj["choices"]
                gold = obj["gold"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{line_no}: malformed task line ({exc})") from exc
            items.append(
                McItem(
                    context=vocab.encode(context),
                    choices=tuple(vocab.encode(c) for c in choices),
                    gold_index=int(gold),
                )
            )
    if not items:
        raise ValidationError(f"{path}: no task items found")
    return items
