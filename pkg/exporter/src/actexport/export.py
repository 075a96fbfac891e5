"""Run one export job: tokenize, forward, pool, write LPT tensors.

The output of a job is the probing pipeline's input contract: one LPT
file per kept layer 0..K (layer 0 is the embedding output), identical
sample order in every file, and an activation-set manifest naming them.
Token counts for every manifest sample are written back in place, and
samples longer than max_tokens are skipped, not truncated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from probecut.pruning import load_prune_plan
from probecut.samples import load_manifest, write_manifest
from probecut.tensors import (
    CONFIG_TAGS,
    POOLING_MODES,
    ActivationSetManifest,
    ActivationTensor,
    pool_tokens,
    write_tensor,
)

from actexport.loading import load_model_and_tokenizer, truncate_layers

_PRUNED_TAGS = ("pruned", "pruned_quant4", "pruned_quant8")


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportJob:
    model_id: str
    manifest_path: str
    out_dir: str
    max_tokens: int = 512
    pooling: str = "mean"
    config_tag: str = "baseline"
    prune_plan_path: str | None = None
    batch_size: int = 8

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.config_tag not in CONFIG_TAGS:
            raise ValueError(f"unknown config_tag {self.config_tag!r}")
        pruned = self.config_tag in _PRUNED_TAGS
        if pruned and self.prune_plan_path is None:
            raise ValueError(f"config_tag {self.config_tag!r} requires a prune plan")
        if not pruned and self.prune_plan_path is not None:
            raise ValueError(f"config_tag {self.config_tag!r} does not take a prune plan")

    @property
    def quant_bits(self) -> int | None:
        if self.config_tag.endswith("quant4"):
            return 4
        if self.config_tag.endswith("quant8"):
            return 8
        return None


@dataclass(frozen=True)
class ExportResult:
    manifest: ActivationSetManifest
    manifest_path: Path
    sample_ids: tuple[str, ...]
    skipped: tuple[tuple[str, int], ...]  # (sample id, token count)


def _token_counts(tokenizer, samples) -> list[int]:
    return [
        len(tokenizer(s.source_text, add_special_tokens=True)["input_ids"])
        for s in samples
    ]


def export(job: ExportJob) -> ExportResult:
    samples = load_manifest(job.manifest_path)
    tokenizer, model = load_model_and_tokenizer(job.model_id, job.quant_bits)

    if job.prune_plan_path is not None:
        plan = load_prune_plan(job.prune_plan_path)
        have = int(model.config.num_hidden_layers)
        if plan["total_layers"] != have:
            raise ExportError(
                f"prune plan covers {plan['total_layers']} layers, model has {have}"
            )
        truncate_layers(model, plan["k_cut"])

    counts = _token_counts(tokenizer, samples)
    samples = [
        dataclasses.replace(s, token_count=n) for s, n in zip(samples, counts)
    ]
    write_manifest(samples, job.manifest_path)

    kept = [s for s in samples if s.token_count <= job.max_tokens]
    skipped = tuple(
        (s.id, s.token_count) for s in samples if s.token_count > job.max_tokens
    )
    if not kept:
        raise ExportError(f"no samples within max_tokens={job.max_tokens}")

    num_layers = int(model.config.num_hidden_layers)
    per_layer: list[list[np.ndarray]] = [[] for _ in range(num_layers + 1)]
    for lo in range(0, len(kept), job.batch_size):
        batch = kept[lo : lo + job.batch_size]
        enc = tokenizer(
            [s.source_text for s in batch], padding=True, return_tensors="pt"
        )
        try:
            with torch.no_grad():
                out = model(**enc, output_hidden_states=True)
        except RuntimeError as exc:
            if "memory" in str(exc).lower():
                raise ExportError(
                    f"out of memory on a batch of {len(batch)}; retry with a smaller batch size"
                ) from exc
            raise
        mask = enc["attention_mask"].cpu().numpy().astype(bool)
        states = out.hidden_states
        if len(states) != num_layers + 1:
            raise ExportError(
                f"model returned {len(states)} hidden states, expected {num_layers + 1}"
            )
        for k, state in enumerate(states):
            per_token = state.detach().cpu().numpy().astype(np.float32, copy=False)
            per_layer[k].append(pool_tokens(per_token, mask, job.pooling))

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = tuple(s.id for s in kept)
    paths = []
    for k, chunks in enumerate(per_layer):
        tensor = ActivationTensor(
            layer_index=k,
            data=np.concatenate(chunks, axis=0),
            sample_ids=ids,
        )
        rel = f"layer_{k:02d}.lpt"
        write_tensor(tensor, out_dir / rel)
        paths.append(rel)

    manifest = ActivationSetManifest(
        model_id=job.model_id,
        config_tag=job.config_tag,
        num_layers=num_layers,
        pooling=job.pooling,
        tensor_paths=tuple(paths),
    )
    manifest_path = out_dir / "activations.json"
    manifest.save(manifest_path)
    return ExportResult(
        manifest=manifest,
        manifest_path=manifest_path,
        sample_ids=ids,
        skipped=skipped,
    )
