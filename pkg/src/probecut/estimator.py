"""Effectiveness estimation from probe accuracy plus a transferable offset.

The knowledge base pairs each dataset's measured detector effectiveness with
its probe accuracy; beta is the mean gap between the two. For a new dataset
the estimate is its probe accuracy plus beta, clamped to [0,1], and
leave-one-out over the knowledge base measures how far that lands from the
measured value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from probecut.tensors import CONFIG_TAGS

METRICS = ("precision", "recall", "f1", "accuracy")
TABLE_METRICS = ("precision", "recall", "f1")
LAYER_POLICIES = ("best_layer", "at_kcut")


@dataclass(frozen=True)
class EffectivenessRecord:
    """Measured detector quality for one dataset under one model config."""

    dataset_id: str
    config_tag: str
    precision: float
    recall: float
    f1: float
    accuracy: float

    def __post_init__(self):
        if self.config_tag not in CONFIG_TAGS:
            raise ValueError(f"unknown config_tag {self.config_tag!r}")
        for name in METRICS:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0,1], got {v}")

    def metric(self, name: str) -> float:
        if name not in METRICS:
            raise ValueError(f"unknown metric {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class ProbeSummary:
    """One dataset's probe accuracy and which layer produced it."""

    dataset_id: str
    feature: str
    acc_lp: float
    layer_policy: str = "best_layer"
    layer_used: int = 0

    def __post_init__(self):
        if not (0.0 <= self.acc_lp <= 1.0):
            raise ValueError(f"acc_lp must lie in [0,1], got {self.acc_lp}")
        if self.layer_policy not in LAYER_POLICIES:
            raise ValueError(f"unknown layer_policy {self.layer_policy!r}")
        if self.layer_used < 0:
            raise ValueError("layer_used must be >= 0")


@dataclass(frozen=True)
class BetaTable:
    """Offsets keyed by (feature, config_tag, metric), with their sources."""

    entries: Mapping[tuple[str, str, str], float]
    provenance: Mapping[tuple[str, str, str], tuple[str, ...]]

    def __post_init__(self):
        for key, beta in self.entries.items():
            if not (-1.0 <= beta <= 1.0):
                raise ValueError(f"beta for {key} outside [-1,1]: {beta}")
            prov = self.provenance.get(key, ())
            if not prov:
                raise ValueError(f"beta for {key} has empty provenance")
        object.__setattr__(self, "entries", dict(self.entries))
        object.__setattr__(
            self, "provenance", {k: tuple(v) for k, v in self.provenance.items()}
        )

    def beta(self, feature: str, config_tag: str, metric: str) -> float:
        key = (feature, config_tag, metric)
        if key not in self.entries:
            raise KeyError(
                f"no beta for feature={feature!r} config={config_tag!r} metric={metric!r}"
            )
        return self.entries[key]

    def to_json_dict(self) -> dict:
        rows = []
        for key in sorted(self.entries):
            feature, config_tag, metric = key
            rows.append(
                {
                    "feature": feature,
                    "config_tag": config_tag,
                    "metric": metric,
                    "beta": self.entries[key],
                    "datasets": list(self.provenance[key]),
                }
            )
        return {"entries": rows}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "BetaTable":
        entries = {}
        provenance = {}
        for row in doc["entries"]:
            key = (row["feature"], row["config_tag"], row["metric"])
            if key in entries:
                raise ValueError(f"duplicate beta entry for {key}")
            entries[key] = float(row["beta"])
            provenance[key] = tuple(row["datasets"])
        return cls(entries=entries, provenance=provenance)


@dataclass(frozen=True)
class EstimationReport:
    """Per-metric effectiveness estimates for one dataset and config."""

    dataset_id: str
    feature: str
    config_tag: str
    acc_lp: float
    layer_policy: str
    estimates: Mapping[str, float]

    def __post_init__(self):
        for name, v in self.estimates.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"estimate for {name} outside [0,1]: {v}")
        object.__setattr__(self, "estimates", dict(self.estimates))


@dataclass(frozen=True)
class ErrorMatrix:
    """Signed leave-one-out errors plus per-(feature, config) mean |Err| rows."""

    metrics: tuple[str, ...]
    cells: Mapping[tuple[str, str, str], Mapping[str, float]]  # (feature, config, held_out)
    means: Mapping[tuple[str, str], Mapping[str, float]]  # (feature, config) -> mean |Err|

    def features(self) -> tuple[str, ...]:
        return tuple(sorted({f for f, _, _ in self.cells}))

    def configs(self, feature: str) -> tuple[str, ...]:
        return tuple(sorted({c for f, c, _ in self.cells if f == feature}))

    def datasets(self, feature: str, config_tag: str) -> tuple[str, ...]:
        return tuple(
            sorted({d for f, c, d in self.cells if f == feature and c == config_tag})
        )


def _check_pairs(knowledge: Sequence[tuple[EffectivenessRecord, ProbeSummary]]):
    if not knowledge:
        raise ValueError("knowledge base is empty")
    for record, summary in knowledge:
        if record.dataset_id != summary.dataset_id:
            raise ValueError(
                f"record dataset {record.dataset_id!r} paired with "
                f"summary dataset {summary.dataset_id!r}"
            )


def compute_beta(
    knowledge: Sequence[tuple[EffectivenessRecord, ProbeSummary]],
    metrics: Sequence[str] = METRICS,
) -> BetaTable:
    """beta(feature, config, metric) = mean over datasets of (metric - acc_lp).

    Contributions are summed in sorted dataset order so the result does not
    depend on input ordering.
    """
    _check_pairs(knowledge)
    contributions: dict[tuple[str, str, str], dict[str, float]] = {}
    for record, summary in knowledge:
        for metric in metrics:
            key = (summary.feature, record.config_tag, metric)
            per_ds = contributions.setdefault(key, {})
            if record.dataset_id in per_ds:
                raise ValueError(
                    f"dataset {record.dataset_id!r} appears twice for {key}"
                )
            per_ds[record.dataset_id] = record.metric(metric) - summary.acc_lp

    entries = {}
    provenance = {}
    for key, per_ds in contributions.items():
        datasets = tuple(sorted(per_ds))
        entries[key] = sum(per_ds[d] for d in datasets) / len(datasets)
        provenance[key] = datasets
    return BetaTable(entries=entries, provenance=provenance)


def estimate(
    summary: ProbeSummary,
    betas: BetaTable,
    config_tag: str,
    metrics: Sequence[str] = METRICS,
) -> EstimationReport:
    """Estimated effectiveness = clamp(acc_lp + beta, 0, 1) per metric."""
    estimates = {}
    for metric in metrics:
        beta = betas.beta(summary.feature, config_tag, metric)
        estimates[metric] = min(1.0, max(0.0, summary.acc_lp + beta))
    return EstimationReport(
        dataset_id=summary.dataset_id,
        feature=summary.feature,
        config_tag=config_tag,
        acc_lp=summary.acc_lp,
        layer_policy=summary.layer_policy,
        estimates=estimates,
    )


def estimation_error(report: EstimationReport, truth: EffectivenessRecord) -> dict[str, float]:
    """Signed per-metric error: estimate minus measured value."""
    if report.dataset_id != truth.dataset_id:
        raise ValueError(
            f"report dataset {report.dataset_id!r} != truth dataset {truth.dataset_id!r}"
        )
    if report.config_tag != truth.config_tag:
        raise ValueError(
            f"report config {report.config_tag!r} != truth config {truth.config_tag!r}"
        )
    errors = {}
    for metric, est in report.estimates.items():
        if metric not in METRICS:
            raise ValueError(f"truth carries no metric {metric!r}")
        errors[metric] = est - truth.metric(metric)
    return errors


def leave_one_out(
    knowledge: Sequence[tuple[EffectivenessRecord, ProbeSummary]],
    metrics: Sequence[str] = TABLE_METRICS,
) -> ErrorMatrix:
    """Hold out each dataset, fit beta on the rest, score the estimate.

    Requires at least 3 distinct datasets per (feature, config) group. The
    mean rows average |Err| over held-out datasets, one row per group.
    """
    _check_pairs(knowledge)
    groups: dict[tuple[str, str], dict[str, tuple[EffectivenessRecord, ProbeSummary]]] = {}
    for record, summary in knowledge:
        gkey = (summary.feature, record.config_tag)
        per_ds = groups.setdefault(gkey, {})
        if record.dataset_id in per_ds:
            raise ValueError(
                f"dataset {record.dataset_id!r} appears twice for "
                f"feature={gkey[0]!r} config={gkey[1]!r}"
            )
        per_ds[record.dataset_id] = (record, summary)

    cells: dict[tuple[str, str, str], dict[str, float]] = {}
    means: dict[tuple[str, str], dict[str, float]] = {}
    for (feature, config_tag), per_ds in groups.items():
        datasets = sorted(per_ds)
        if len(datasets) < 3:
            raise ValueError(
                f"feature={feature!r} config={config_tag!r} has "
                f"{len(datasets)} datasets, need at least 3"
            )
        for held_out in datasets:
            rest = [per_ds[d] for d in datasets if d != held_out]
            betas = compute_beta(rest, metrics=metrics)
            truth, summary = per_ds[held_out]
            report = estimate(summary, betas, config_tag, metrics=metrics)
            cells[(feature, config_tag, held_out)] = estimation_error(report, truth)
        means[(feature, config_tag)] = {
            m: sum(abs(cells[(feature, config_tag, d)][m]) for d in datasets) / len(datasets)
            for m in metrics
        }
    return ErrorMatrix(metrics=tuple(metrics), cells=cells, means=means)
