"""Sample manifests, CWE filtering and balanced train/validation splits."""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

_CWE_RE = re.compile(r"^CWE-[1-9][0-9]*$")
NO_CWE = "NoCWE"


@dataclass(frozen=True)
class CodeSample:
    """One C/C++ function with its dataset identity and CWE label."""

    id: str
    source_text: str
    cwe_label: str
    dataset_id: str
    token_count: Optional[int] = None

    def __post_init__(self):
        if self.cwe_label != NO_CWE and not _CWE_RE.match(self.cwe_label):
            raise ValueError(
                f"sample {self.id!r}: cwe_label {self.cwe_label!r} is neither "
                f"{NO_CWE!r} nor CWE-<number>"
            )
        if self.token_count is not None and self.token_count < 0:
            raise ValueError(f"sample {self.id!r}: negative token_count")


@dataclass(frozen=True)
class SplitPlan:
    """Balanced training ids (repeats allowed) plus a disjoint validation set."""

    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    per_class_limit: int
    seed: int

    def __post_init__(self):
        overlap = set(self.val_ids) & set(self.train_ids)
        if overlap:
            raise ValueError(f"validation ids leak into train: {sorted(overlap)[:5]}")


@dataclass(frozen=True)
class TopCweSelection:
    """Ranked CWE labels; `truncated` flags that fewer than requested exist."""

    labels: tuple[str, ...]
    requested: int
    truncated: bool


def load_manifest(path: str | Path) -> list[CodeSample]:
    """Read a JSONL manifest (fields: id, source, cwe, dataset, optional tokens).

    Raises ValueError naming the offending line for malformed records and
    naming the id for duplicates. Blank lines are skipped.
    """
    path = Path(path)
    samples: list[CodeSample] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed manifest line ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise ValueError(f"{path}:{lineno}: manifest line is not an object")
            missing = [k for k in ("id", "source", "cwe", "dataset") if k not in rec]
            if missing:
                raise ValueError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            sid = str(rec["id"])
            if sid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate sample id {sid!r}")
            seen.add(sid)
            tokens = rec.get("tokens")
            try:
                sample = CodeSample(
                    id=sid,
                    source_text=str(rec["source"]),
                    cwe_label=str(rec["cwe"]),
                    dataset_id=str(rec["dataset"]),
                    token_count=None if tokens is None else int(tokens),
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            samples.append(sample)
    return samples


def write_manifest(samples: Iterable[CodeSample], path: str | Path) -> None:
    """Inverse of load_manifest; one JSON object per line, input order kept."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            rec = {"id": s.id, "source": s.source_text, "cwe": s.cwe_label, "dataset": s.dataset_id}
            if s.token_count is not None:
                rec["tokens"] = s.token_count
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def estimate_token_count(source: str) -> int:
    """Crude whitespace/punctuation token estimate.

    Approximate stand-in for a model tokenizer count; use only when the
    exporter has not written real counts back to the manifest.
    """
    return len(re.findall(r"\w+|[^\w\s]", source))


def filter_samples(
    samples: Sequence[CodeSample],
    max_tokens: int,
    allowed_cwes: set[str],
) -> list[CodeSample]:
    """Keep samples within the token budget and the allowed label set, order preserved."""
    if max_tokens <= 0:
        raise ValueError("max_tokens must be positive")
    out = []
    for s in samples:
        if s.token_count is None:
            raise ValueError(
                f"sample {s.id!r} has no token_count; run the exporter or an "
                f"estimate (estimate_token_count) first"
            )
        if s.token_count <= max_tokens and s.cwe_label in allowed_cwes:
            out.append(s)
    return out


def _cwe_number(label: str) -> int:
    return int(label.split("-", 1)[1])


def select_top_cwes(samples: Sequence[CodeSample], n: int) -> TopCweSelection:
    """The n most frequent CWE labels (NoCWE excluded), ties to the lower CWE number."""
    if n < 1:
        raise ValueError("n must be >= 1")
    counts: dict[str, int] = {}
    for s in samples:
        if s.cwe_label == NO_CWE:
            continue
        counts[s.cwe_label] = counts.get(s.cwe_label, 0) + 1
    ranked = sorted(counts, key=lambda c: (-counts[c], _cwe_number(c)))
    truncated = len(ranked) < n
    return TopCweSelection(labels=tuple(ranked[:n]), requested=n, truncated=truncated)


def _class_rng(seed: int, label: str) -> np.random.Generator:
    # Child stream per class so adding a class never reshuffles the others.
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode("utf-8"))])


def balance_classes(
    samples: Sequence[CodeSample],
    per_class_limit: int,
    val_fraction: float,
    seed: int,
) -> SplitPlan:
    """Carve out validation per class, then over/undersample train to the limit.

    Validation ids are reserved before any copying so oversampled duplicates can
    never leak across the split. Classes short of the limit are grown by cyclic
    copying of their remaining ids (original order); classes over it are cut by
    a seeded random choice.
    """
    if per_class_limit <= 0:
        raise ValueError("per_class_limit must be positive")
    if not (0.0 < val_fraction < 1.0):
        raise ValueError("val_fraction must be in (0,1)")

    by_class: dict[str, list[str]] = {}
    for s in samples:
        by_class.setdefault(s.cwe_label, []).append(s.id)

    train_ids: list[str] = []
    val_ids: list[str] = []
    for label in sorted(by_class):
        ids = by_class[label]
        if len(ids) < 2:
            raise ValueError(f"class {label!r} has only {len(ids)} sample(s); need >= 2")
        rng = _class_rng(seed, label)
        n_val = max(1, int(len(ids) * val_fraction))
        val_pick = set(rng.choice(len(ids), size=n_val, replace=False).tolist())
        val = [ids[i] for i in sorted(val_pick)]
        pool = [ids[i] for i in range(len(ids)) if i not in val_pick]
        if len(pool) >= per_class_limit:
            keep = sorted(rng.choice(len(pool), size=per_class_limit, replace=False).tolist())
            train = [pool[i] for i in keep]
        else:
            train = [pool[i % len(pool)] for i in range(per_class_limit)]
        train_ids.extend(train)
        val_ids.extend(val)

    return SplitPlan(
        train_ids=tuple(train_ids),
        val_ids=tuple(val_ids),
        per_class_limit=per_class_limit,
        seed=seed,
    )
