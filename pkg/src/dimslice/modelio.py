"""File formats: the model manifest/blob pair and the character vocabulary.

A model directory holds `model.json` (config plus tensor records with byte
offsets, and a `sliced` flag for truncated models) and `model.bin` (raw
little-endian float64 payload, tensors row-major in manifest order). Both
files are byte-deterministic for a given model. `vocab.json` is the ordered
character array of a corpus-derived vocabulary.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import BlockWeights, ModelConfig, ModelWeights, validate_weights
from .slicer import SlicedModel, SparsityLevel

FORMAT_NAME = "dimslice-model-v1"
MANIFEST_FILE = "model.json"
BLOB_FILE = "model.bin"
VOCAB_FILE = "vocab.json"

_CONFIG_FIELDS = ("d", "m", "h_attn", "h_dim", "v", "n_blocks", "vocab_size",
                  "max_seq_len", "gamma", "sliced")


@dataclass
class Vocabulary:
    """Character-level vocabulary with dense ids, ordered by code point."""

    chars: list[str]

    def __post_init__(self):
        if not self.chars:
            raise ValidationError("vocabulary must not be empty")
        if self.chars != sorted(set(self.chars)):
            raise ValidationError("vocabulary characters must be unique and code-point sorted")
        self.index = {ch: i for i, ch in enumerate(self.chars)}

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        return cls(sorted(set(text)))

    @property
    def size(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> np.ndarray:
        """Token ids for text; unknown characters map to id 0 with a warning."""
        unknown = {ch for ch in text if ch not in self.index}
        if unknown:
            warnings.warn(
                f"{len(unknown)} character(s) outside the vocabulary map to id 0: "
                f"{sorted(unknown)!r}",
                stacklevel=2,
            )
        return np.array([self.index.get(ch, 0) for ch in text], dtype=np.int64)

    def decode(self, ids) -> str:
        return "".join(self.chars[int(i)] for i in ids)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.chars, ensure_ascii=False) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


def _tensor_entries(weights: ModelWeights, adapters) -> list[tuple[str, np.ndarray]]:
    entries: list[tuple[str, np.ndarray]] = [("embedding", weights.embedding)]
    for i, block in enumerate(weights.blocks):
        for f in dataclasses.fields(BlockWeights):
            entries.append((f"blocks.{i}.{f.name}", getattr(block, f.name)))
    entries.append(("w_norm_final", weights.w_norm_final))
    entries.append(("unembedding", weights.unembedding))
    if adapters is not None:
        for i, a in enumerate(adapters):
            entries.append((f"adapters.{i}", a))
    return entries


def _as_2d(array: np.ndarray) -> np.ndarray:
    return array[None, :] if array.ndim == 1 else array


def save_model(directory, model: ModelWeights | SlicedModel, config: ModelConfig | None = None) -> None:
    """Write model.json + model.bin; accepts plain weights or a SlicedModel."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(model, SlicedModel):
        weights, config = model.weights, model.config
        adapters = model.adapters
        sliced = {"s": model.level.s, "d_kept": model.level.d_kept, "mode": model.mode}
    else:
        if config is None:
            raise ValidationError("config is required when saving plain ModelWeights")
        weights, adapters, sliced = model, None, None
    validate_weights(weights, config)

    records = []
    payload = bytearray()
    for name, array in _tensor_entries(weights, adapters):
        a2 = np.ascontiguousarray(_as_2d(array), dtype="<f8")
        records.append(
            {"name": name, "rows": a2.shape[0], "cols": a2.shape[1], "offset": len(payload)}
        )
        payload.extend(a2.tobytes(order="C"))

    manifest = {
        "format": FORMAT_NAME,
        "dtype": "<f8",
        "config": {name: getattr(config, name) for name in _CONFIG_FIELDS},
        "sliced": sliced,
        "tensors": records,
    }
    (directory / MANIFEST_FILE).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (directory / BLOB_FILE).write_bytes(bytes(payload))


def _read_tensor(blob: bytes, record: dict) -> np.ndarray:
    rows, cols, offset = record["rows"], record["cols"], record["offset"]
    n = rows * cols
    if offset + 8 * n > len(blob):
        raise ValidationError(f"tensor {record['name']!r} overruns the blob")
    flat = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
    return flat.reshape(rows, cols).astype(np.float64)


def load_model(directory) -> tuple[ModelWeights | SlicedModel, ModelConfig]:
    """Read a model directory back; returns (model, config).

    Sliced models come back as SlicedModel (with adapters when present);
    plain models come back as ModelWeights.
    """
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ValidationError(f"no {MANIFEST_FILE} in {directory}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{directory / MANIFEST_FILE} is not valid JSON: {exc}") from exc
    if manifest.get("format") != FORMAT_NAME:
        raise ValidationError(f"unsupported model format {manifest.get('format')!r}")
    config = ModelConfig(**manifest["config"])
    blob = (directory / BLOB_FILE).read_bytes()

    tensors = {}
    for record in manifest["tensors"]:
        tensors[record["name"]] = _read_tensor(blob, record)

    def take(name: str, vector: bool = False) -> np.ndarray:
        if name not in tensors:
            raise ValidationError(f"manifest is missing tensor {name!r}")
        t = tensors.pop(name)
        return t[0] if vector else t

    blocks = []
    for i in range(config.n_blocks):
        fields = {}
        for f in dataclasses.fields(BlockWeights):
            fields[f.name] = take(f"blocks.{i}.{f.name}", vector=f.name.startswith("w_norm"))
        blocks.append(BlockWeights(**fields))
    weights = ModelWeights(
        embedding=take("embedding"),
        blocks=blocks,
        w_norm_final=take("w_norm_final", vector=True),
        unembedding=take("unembedding"),
    )
    validate_weights(weights, config)

    sliced = manifest.get("sliced")
    if sliced is None:
        if tensors:
            raise ValidationError(f"unexpected tensors in manifest: {sorted(tensors)}")
        return weights, config
    adapters = None
    adapter_names = [name for name in tensors if name.startswith("adapters.")]
    if adapter_names:
        adapters = [take(f"adapters.{i}") for i in range(len(adapter_names))]
    level = SparsityLevel(s=float(sliced["s"]), d=int(round(sliced["d_kept"] / (1.0 - sliced["s"]))),
                          d_kept=int(sliced["d_kept"]))
    model = SlicedModel(weights=weights, config=config, level=level,
                        mode=sliced["mode"], adapters=adapters)
    return model, config
