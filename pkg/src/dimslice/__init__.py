"""Desk-scale lab for residual-stream slicing of toy transformers.

Library layers: `linalg` (matrix primitives), `model` (toy transformer),
`slicer` (fold/rotate/truncate), `metrics` (entropy, perplexity, accuracy),
`scaling` (law transforms and fits), `autodiff`/`training` (minimal tape and
optimizer loop), `modelio`/`corpus` (files and synthetic text), `cli`.
"""

from .errors import DimsliceError, NumericalError, ShapeError, ValidationError
from .linalg import SeededRng, SymmetricEigen
from .metrics import EntropyEstimate, McItem, PplResult
from .model import ActivationTrace, BlockWeights, ModelConfig, ModelWeights
from .scaling import FitResult, SweepRecord
from .slicer import RotationPlan, SlicedModel, SparsityLevel

__all__ = [
    "ActivationTrace",
    "BlockWeights",
    "DimsliceError",
    "EntropyEstimate",
    "FitResult",
    "McItem",
    "ModelConfig",
    "ModelWeights",
    "NumericalError",
    "PplResult",
    "RotationPlan",
    "SeededRng",
    "ShapeError",
    "SlicedModel",
    "SparsityLevel",
    "SweepRecord",
    "SymmetricEigen",
    "ValidationError",
]

__version__ = "0.1.0"
