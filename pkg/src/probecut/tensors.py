"""Per-layer activation storage (LPT binary files) and token pooling.

An LPT file is little-endian throughout: magic ``LPT1``, u32 layer_index,
u32 num_samples, u32 hidden_dim, u32 id_block_length, the id block
(newline-separated UTF-8 sample ids), then num_samples*hidden_dim float32
values row-major. Writing is byte-deterministic so reruns can be diffed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"LPT1"
_HEADER = struct.Struct("<4sIIII")

CONFIG_TAGS = (
    "baseline",
    "quant4",
    "quant8",
    "pruned",
    "pruned_quant4",
    "pruned_quant8",
)
POOLING_MODES = ("mean", "first_token", "last_token")


class LptFormatError(ValueError):
    """Raised when a file does not parse as LPT."""


@dataclass(frozen=True)
class ActivationTensor:
    """Pooled hidden states of one layer: one float32 row per sample."""

    layer_index: int
    data: np.ndarray  # [num_samples, hidden_dim] float32
    sample_ids: tuple[str, ...]

    def __post_init__(self):
        if self.layer_index < 0:
            raise ValueError("layer_index must be >= 0")
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"data must be 2-D, got shape {arr.shape}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("data contains non-finite values")
        if len(self.sample_ids) != arr.shape[0]:
            raise ValueError(
                f"sample_ids length {len(self.sample_ids)} != num_samples {arr.shape[0]}"
            )
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))

    @property
    def num_samples(self) -> int:
        return self.data.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.data.shape[1]


def write_tensor(tensor: ActivationTensor, path) -> None:
    id_block = "\n".join(tensor.sample_ids).encode("utf-8")
    header = _HEADER.pack(
        _MAGIC,
        tensor.layer_index,
        tensor.num_samples,
        tensor.hidden_dim,
        len(id_block),
    )
    payload = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(id_block)
        fh.write(payload)


def read_tensor(path) -> ActivationTensor:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size or raw[:4] != _MAGIC:
        raise LptFormatError(f"{path}: not an LPT file")
    magic, layer_index, num_samples, hidden_dim, id_len = _HEADER.unpack_from(raw)
    ids_end = _HEADER.size + id_len
    expected = ids_end + num_samples * hidden_dim * 4
    if len(raw) != expected:
        raise LptFormatError(
            f"{path}: truncated or oversized payload, expected {expected} bytes, got {len(raw)}"
        )
    id_block = raw[_HEADER.size:ids_end].decode("utf-8")
    sample_ids = tuple(id_block.split("\n")) if id_block else ()
    if num_samples == 0:
        sample_ids = ()
    if len(sample_ids) != num_samples:
        raise LptFormatError(
            f"{path}: id block lists {len(sample_ids)} ids for {num_samples} samples"
        )
    data = np.frombuffer(raw[ids_end:], dtype="<f4").reshape(num_samples, hidden_dim)
    return ActivationTensor(layer_index=layer_index, data=data.copy(), sample_ids=sample_ids)


def pool_tokens(per_token: np.ndarray, mask: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Reduce [num_samples, num_tokens, hidden_dim] to one vector per sample.

    `mask` flags the valid (non-pad) tokens. mean averages those; first_token
    and last_token pick the first/last valid position.
    """
    if mode not in POOLING_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}")
    per_token = np.asarray(per_token)
    mask = np.asarray(mask, dtype=bool)
    if per_token.ndim != 3:
        raise ValueError(f"per_token must be 3-D, got shape {per_token.shape}")
    if mask.shape != per_token.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != {per_token.shape[:2]}")

    counts = mask.sum(axis=1)
    bad = np.nonzero(counts == 0)[0]
    if bad.size:
        raise ValueError(f"sample {bad[0]} has no valid tokens")

    if mode == "mean":
        weights = mask.astype(per_token.dtype)
        sums = np.einsum("sth,st->sh", per_token, weights)
        return sums / counts[:, None].astype(per_token.dtype)
    if mode == "first_token":
        idx = mask.argmax(axis=1)
    else:  # last_token
        idx = mask.shape[1] - 1 - mask[:, ::-1].argmax(axis=1)
    return per_token[np.arange(per_token.shape[0]), idx]


@dataclass(frozen=True)
class ActivationSetManifest:
    """Describes a complete per-layer tensor set for one model config."""

    model_id: str
    config_tag: str
    num_layers: int  # K; files cover layers 0..K
    pooling: str
    tensor_paths: tuple[str, ...] = field(default=())  # relative, index = layer

    def __post_init__(self):
        if self.config_tag not in CONFIG_TAGS:
            raise ValueError(f"unknown config_tag {self.config_tag!r}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if len(self.tensor_paths) != self.num_layers + 1:
            raise ValueError(
                f"expected {self.num_layers + 1} tensor files (layers 0..{self.num_layers}), "
                f"got {len(self.tensor_paths)}"
            )
        object.__setattr__(self, "tensor_paths", tuple(self.tensor_paths))

    def save(self, path) -> None:
        doc = {
            "model_id": self.model_id,
            "config_tag": self.config_tag,
            "num_layers": self.num_layers,
            "pooling": self.pooling,
            "tensor_paths": list(self.tensor_paths),
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ActivationSetManifest":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            model_id=doc["model_id"],
            config_tag=doc["config_tag"],
            num_layers=doc["num_layers"],
            pooling=doc["pooling"],
            tensor_paths=tuple(doc["tensor_paths"]),
        )


def load_tensor_set(manifest_path) -> tuple[ActivationSetManifest, list[ActivationTensor]]:
    """Load a manifest plus every tensor it references, checking alignment.

    All tensors must agree on sample_ids (same samples, same order); the
    tensor at index k must carry layer_index k.
    """
    manifest_path = Path(manifest_path)
    manifest = ActivationSetManifest.load(manifest_path)
    tensors = []
    for k, rel in enumerate(manifest.tensor_paths):
        t = read_tensor(manifest_path.parent / rel)
        if t.layer_index != k:
            raise LptFormatError(
                f"{rel}: layer_index {t.layer_index} but manifest slot {k}"
            )
        tensors.append(t)
    ids = tensors[0].sample_ids if tensors else ()
    for t in tensors[1:]:
        if t.sample_ids != ids:
            raise LptFormatError(
                f"layer {t.layer_index} sample_ids differ from layer 0"
            )
    return manifest, tensors
