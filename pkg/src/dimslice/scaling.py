"""Sparsity-performance laws: transforms, predictors, line fits, and the
published reference coefficients.

The perplexity law relates the unpruned and pruned models through
ln(ppl0)/ln(ppl) = 1 - s; the accuracy law states ln(acc/acc0) is
proportional to 1 - s. Sweep points are fitted as y = a*s + b by ordinary
least squares, with RMSE = sqrt(mean squared residual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NumericalError, ValidationError

TRANSFORM_PPL = "ln_ppl_ratio"
TRANSFORM_ACC = "ln_acc_ratio"


@dataclass
class SweepRecord:
    """Metrics measured at one sparsity level."""

    s: float
    token_ppl: float | None = None
    mc_acc: dict[str, float] = field(default_factory=dict)
    log2_emb_ppl: float | None = None

    def __post_init__(self):
        if self.token_ppl is None and self.log2_emb_ppl is None and not self.mc_acc:
            raise ValidationError(f"sweep record at s={self.s} carries no metric")


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    rmse: float
    n_points: int

    def to_json(self, metric: str, transform: str) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "rmse": self.rmse,
            "n": self.n_points,
            "metric": metric,
            "transform": transform,
        }


class AccPrediction(NamedTuple):
    value: float
    out_of_range: bool  # True when the law extrapolates above 1


def y_ppl(ppl0: float, ppl: float) -> float:
    """Perplexity transform ln(ppl0)/ln(ppl)."""
    if ppl0 <= 1.0 or ppl <= 1.0:
        raise ValidationError(f"perplexities must exceed 1, got ppl0={ppl0}, ppl={ppl}")
    return math.log(ppl0) / math.log(ppl)


def y_acc(acc0: float, acc: float) -> float:
    """Accuracy transform ln(acc/acc0)."""
    if acc0 <= 0.0 or acc <= 0.0:
        raise ValidationError(f"accuracies must be positive, got acc0={acc0}, acc={acc}")
    return math.log(acc / acc0)


def fit_line(points) -> FitResult:
    """Ordinary least squares y = a*s + b over (s, y) pairs."""
    pts = [(float(s), float(y)) for s, y in points]
    if len(pts) < 2:
        raise ValidationError(f"need at least 2 points to fit a line, got {len(pts)}")
    s = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    s_centered = s - s.mean()
    denom = float(np.dot(s_centered, s_centered))
    if denom == 0.0:
        raise ValidationError("degenerate abscissas: all sparsity values are equal")
    a = float(np.dot(s_centered, y - y.mean()) / denom)
    b = float(y.mean() - a * s.mean())
    residuals = y - (a * s + b)
    rmse = float(np.sqrt(np.mean(residuals**2)))
    return FitResult(a=a, b=b, rmse=rmse, n_points=len(pts))


def predict_ppl(ppl0: float, s: float) -> float:
    """Pruned-model perplexity implied by the ideal law at sparsity s."""
    if ppl0 <= 1.0:
        raise ValidationError(f"baseline perplexity must exceed 1, got {ppl0}")
    if not 0.0 <= s < 1.0:
        raise ValidationError(f"sparsity must lie in [0, 1), got {s}")
    try:
        return math.exp(math.log(ppl0) / (1.0 - s))
    except OverflowError as exc:
        raise NumericalError(
            f"predicted perplexity overflows float64 for ppl0={ppl0}, s={s}"
        ) from exc


def predict_acc(acc0: float, s: float, coeffs: tuple[float, float]) -> AccPrediction:
    """Pruned-model accuracy acc0 * exp(a*s + b) under fitted coefficients.

    Values above 1 are flagged, not clamped: the fitted law can extrapolate
    out of range (e.g. a positive intercept at s=0) and that should be
    visible to the caller.
    """
    if not 0.0 < acc0 <= 1.0:
        raise ValidationError(f"baseline accuracy must lie in (0, 1], got {acc0}")
    if not 0.0 <= s < 1.0:
        raise ValidationError(f"sparsity must lie in [0, 1), got {s}")
    a, b = coeffs
    value = acc0 * math.exp(a * s + b)
    return AccPrediction(value=value, out_of_range=value > 1.0)


# Published fits (slope a, intercept b, RMSE) for the two instruction-tuned
# models evaluated at multiple sparsity levels; perplexity rows use the
# ln_ppl_ratio transform, accuracy rows the ln_acc_ratio transform.
REFERENCE_COEFFICIENTS: dict[tuple[str, str, str], tuple[float, float, float]] = {
    ("Llama-3-8B-Instruct", "WikiText2", "perplexity"): (-1.08, 0.96, 0.03),
    ("Phi-3-mini-4k-Instruct", "WikiText2", "perplexity"): (-0.90, 1.02, 0.01),
    ("Llama-3-8B-Instruct", "ARC-e", "accuracy"): (-2.14, 0.04, 0.05),
    ("Phi-3-mini-4k-Instruct", "ARC-e", "accuracy"): (-1.84, 0.04, 0.04),
    ("Llama-3-8B-Instruct", "ARC-c", "accuracy"): (-2.02, -0.07, 0.09),
    ("Phi-3-mini-4k-Instruct", "ARC-c", "accuracy"): (-1.88, -0.01, 0.02),
    ("Llama-3-8B-Instruct", "WinoGrande", "accuracy"): (-0.86, -0.02, 0.02),
    ("Phi-3-mini-4k-Instruct", "WinoGrande", "accuracy"): (-0.66, -0.02, 0.02),
    ("Llama-3-8B-Instruct", "PIQA", "accuracy"): (-0.91, -0.01, 0.03),
    ("Phi-3-mini-4k-Instruct", "PIQA", "accuracy"): (-0.90, 0.01, 0.01),
}


def _normalize(s: str) -> str:
    return "".join(ch for ch in s.lower() if ch.isalnum())


_MODEL_ALIASES = {_normalize(name): name for name, _, _ in REFERENCE_COEFFICIENTS}
_MODEL_ALIASES.update({"llama3": "Llama-3-8B-Instruct", "phi3": "Phi-3-mini-4k-Instruct"})
_DATASET_ALIASES = {_normalize(name): name for _, name, _ in REFERENCE_COEFFICIENTS}
_DATASET_METRIC = {name: metric for _, name, metric in REFERENCE_COEFFICIENTS}


def reference_coefficients(model: str, dataset: str, metric: str | None = None) -> tuple[float, float, float]:
    """Look up a published (a, b, rmse) triple; aliases like "llama3" work.

    When metric is omitted it is inferred from the dataset (WikiText2 carries
    perplexity, the rest accuracy).
    """
    canonical_model = _MODEL_ALIASES.get(_normalize(model))
    canonical_dataset = _DATASET_ALIASES.get(_normalize(dataset))
    if canonical_model is not None and canonical_dataset is not None:
        if metric is None:
            metric = _DATASET_METRIC[canonical_dataset]
        key = (canonical_model, canonical_dataset, metric)
        if key in REFERENCE_COEFFICIENTS:
            return REFERENCE_COEFFICIENTS[key]
    known = sorted({f"{m} / {ds} / {k}" for m, ds, k in REFERENCE_COEFFICIENTS})
    raise ValidationError(
        f"no reference coefficients for model={model!r}, dataset={dataset!r}, "
        f"metric={metric!r}; known entries:\n  " + "\n  ".join(known)
    )
