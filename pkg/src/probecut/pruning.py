"""Cut-off selection: accuracy curves -> loss curves -> k_cut and baselines.

Layer 0 is the embedding output throughout; a transformer with K blocks
yields layers 0..K. The loss of layer k is the accuracy gap to the best
layer, and k_cut minimizes the summed absolute loss across every
(dataset, feature) curve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from probecut.probe import LayerAccuracyCurve


@dataclass(frozen=True)
class LossCurve:
    """Per-layer accuracy deficit relative to the best layer of the curve."""

    dataset_id: str
    feature: str
    layer_indices: tuple[int, ...]
    losses: tuple[float, ...]

    def __post_init__(self):
        if len(self.losses) != len(self.layer_indices):
            raise ValueError("one loss per layer required")
        if not self.losses:
            raise ValueError("empty curve")
        if any(l < 0 for l in self.losses):
            raise ValueError("losses must be non-negative")
        if min(self.losses) != 0.0:
            raise ValueError("best layer must have loss exactly 0")
        object.__setattr__(self, "layer_indices", tuple(int(k) for k in self.layer_indices))
        object.__setattr__(self, "losses", tuple(float(l) for l in self.losses))

    @property
    def curve_id(self) -> str:
        return f"{self.dataset_id}/{self.feature}"


@dataclass(frozen=True)
class CutoffDecision:
    k_cut: int
    layer_indices: tuple[int, ...]
    total_scores: tuple[float, ...]  # sum of |loss_k| across curves, per layer
    curve_ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.total_scores) != len(self.layer_indices):
            raise ValueError("one score per layer required")
        if self.k_cut not in self.layer_indices:
            raise ValueError("k_cut must be one of the scored layers")
        best = self.total_scores[self.layer_indices.index(self.k_cut)]
        if any(s < best for s in self.total_scores):
            raise ValueError("k_cut must minimize the total score")


def loss_curve(curve: LayerAccuracyCurve) -> LossCurve:
    """loss_k = (best layer's average accuracy) - (layer k's average accuracy)."""
    avgs = curve.avg_accuracies()
    best = float(avgs.max())
    return LossCurve(
        dataset_id=curve.dataset_id,
        feature=curve.feature,
        layer_indices=curve.layer_indices,
        losses=tuple(best - float(a) for a in avgs),
    )


def select_kcut(curves: list[LossCurve]) -> CutoffDecision:
    """argmin over layers of the summed |loss| across all curves; ties -> smallest k."""
    if not curves:
        raise ValueError("at least one curve required")
    layers = curves[0].layer_indices
    for c in curves[1:]:
        if c.layer_indices != layers:
            raise ValueError(
                f"curve {c.curve_id} covers layers {c.layer_indices[0]}..{c.layer_indices[-1]} "
                f"({len(c.layer_indices)} layers), expected {len(layers)} layers"
            )
    totals = [sum(abs(c.losses[i]) for c in curves) for i in range(len(layers))]
    best_i = min(range(len(layers)), key=lambda i: (totals[i], layers[i]))
    return CutoffDecision(
        k_cut=layers[best_i],
        layer_indices=layers,
        total_scores=tuple(totals),
        curve_ids=tuple(c.curve_id for c in curves),
    )


def baseline_cutpoints(k_cut: int, total_layers: int, seed: int) -> dict:
    """Corroboration baselines: half the cut-off, and random layer removal.

    random_removed holds as many distinct transformer-layer indices (1..K,
    never the embedding) as k_cut-pruning itself removes.
    """
    if not (0 < k_cut < total_layers):
        raise ValueError("k_cut must satisfy 0 < k_cut < total_layers")
    removed_count = total_layers - k_cut
    rng = np.random.default_rng(seed)
    choice = rng.choice(np.arange(1, total_layers + 1), size=removed_count, replace=False)
    return {
        "half_cut": k_cut // 2,
        "random_removed": set(int(i) for i in choice),
    }


def prune_plan(k_cut: int, total_layers: int) -> list[int]:
    """Layer indices retained after cutting: 0..k_cut inclusive."""
    if not (0 <= k_cut <= total_layers):
        raise ValueError("k_cut must satisfy 0 <= k_cut <= total_layers")
    return list(range(k_cut + 1))


def save_prune_plan(k_cut: int, total_layers: int, path) -> None:
    """Exporter-consumable plan file: retained layer list plus context."""
    plan = {
        "k_cut": k_cut,
        "total_layers": total_layers,
        "retained_layers": prune_plan(k_cut, total_layers),
    }
    Path(path).write_text(json.dumps(plan, indent=2) + "\n", encoding="utf-8")


def load_prune_plan(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    body = "\n".join(l for l in text.splitlines() if not l.startswith("#"))
    plan = json.loads(body)
    expected = prune_plan(plan["k_cut"], plan["total_layers"])
    if plan["retained_layers"] != expected:
        raise ValueError(f"{path}: retained_layers inconsistent with k_cut")
    return plan
