"""Self-describing output files: '#' header lines over a UTF-8 body.

Every artifact starts with comment lines recording the tool version, the
seed, and the flag set that produced it, so a rerun can be checked for
byte-identical output. Bodies are either comma-delimited tables with a
header row, or JSON documents (serialized with sorted keys for stable
bytes).
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Mapping, Sequence

from probecut import __version__ as _VERSION


def header_lines(producer: str, seed: int, args: Mapping[str, object], extra: Mapping[str, str] | None = None) -> list[str]:
    """Canonical artifact header. `args` is recorded sorted by flag name."""
    rendered = " ".join(f"{k}={_render_arg(v)}" for k, v in sorted(args.items()))
    lines = [
        f"# probecut {_VERSION}",
        f"# producer: {producer}",
        f"# seed: {seed}",
        f"# args: {rendered}" if rendered else "# args:",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {value}")
    return lines


def _render_arg(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def write_artifact(path, headers: Sequence[str], body: str) -> None:
    for line in headers:
        if not line.startswith("#"):
            raise ValueError(f"header line must start with '#': {line!r}")
        if "\n" in line:
            raise ValueError("header lines must be single lines")
    text = "\n".join(headers) + "\n" + body
    if not text.endswith("\n"):
        text += "\n"
    Path(path).write_text(text, encoding="utf-8")


def read_artifact(path) -> tuple[dict[str, str], str]:
    """Split an artifact into header metadata and its body text.

    Header lines of the form '# key: value' become dict entries; the first
    line's tool stamp is stored under 'tool'. Files without any '#' prefix
    are returned with empty metadata, so plain user-authored inputs load too.
    """
    text = Path(path).read_text(encoding="utf-8")
    meta: dict[str, str] = {}
    body_start = 0
    for line in text.splitlines(keepends=True):
        if not line.startswith("#"):
            break
        body_start += len(line)
        stripped = line[1:].strip()
        if stripped.startswith("probecut ") and "tool" not in meta:
            meta["tool"] = stripped
        elif ":" in stripped:
            key, _, value = stripped.partition(":")
            meta[key.strip()] = value.strip()
    return meta, text[body_start:]


def csv_body(rows: Sequence[Sequence[object]]) -> str:
    """Comma-delimited body with stable newlines; first row is the header."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def parse_csv_body(body: str) -> list[list[str]]:
    return [row for row in csv.reader(io.StringIO(body)) if row]


def json_body(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def read_json_artifact(path) -> tuple[dict[str, str], dict]:
    meta, body = read_artifact(path)
    return meta, json.loads(body)


def pct(value: float) -> str:
    """Percentage with one decimal, the delimited-table number format."""
    return f"{value * 100.0:.1f}"
