"""Code features over token streams: cyclomatic complexity, Halstead difficulty, binning.

These are the probe targets: cheap structural proxies computed without a
model, later predicted from per-layer activations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from probecut.lexer import CLOSING_BRACKETS, Token, TokenKind

#: Sentinel returned by assign_class for values outside every interval.
DISCARDED = "discarded"

# Decision tokens: one extra independent path each. The `while` of a do-while
# appears once in the stream, so it naturally counts once. `else` alone is not
# a decision point (standard McCabe).
_DECISION_KEYWORDS = frozenset({"if", "for", "while", "case", "catch"})
_DECISION_PUNCTUATORS = frozenset({"&&", "||", "?"})


@dataclass(frozen=True)
class FunctionMetrics:
    """Cyclomatic complexity plus raw Halstead counts and difficulty."""

    cc: int
    n1: int  # distinct operators
    n2: int  # distinct operands
    total_operators: int
    total_operands: int
    hd: float

    def __post_init__(self):
        if self.cc < 1:
            raise ValueError("cc must be >= 1")
        if self.n1 > self.total_operators or self.n2 > self.total_operands:
            raise ValueError("distinct counts cannot exceed totals")


@dataclass(frozen=True)
class BinningScheme:
    """Ascending, disjoint, half-open [lo, hi) intervals for one feature."""

    feature: str  # "cc" or "hd"
    boundaries: tuple[tuple[float, float], ...]
    coverage: float
    discarded_rule: str

    def __post_init__(self):
        prev_hi = None
        for lo, hi in self.boundaries:
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi})")
            if prev_hi is not None and lo < prev_hi:
                raise ValueError("intervals must be ascending and disjoint")
            prev_hi = hi
        if not (0.0 < self.coverage <= 1.0):
            raise ValueError("coverage must be in (0,1]")

    @property
    def num_classes(self) -> int:
        return len(self.boundaries)

    def labels(self) -> list[str]:
        """Human-readable interval names, e.g. "1-5" for [1,6) at width 5."""
        out = []
        for lo, hi in self.boundaries:
            lo_i, hi_i = int(lo), int(math.ceil(hi)) - 1
            out.append(str(lo_i) if lo_i == hi_i else f"{lo_i}-{hi_i}")
        return out


def _significant(tokens: Sequence[Token]):
    for t in tokens:
        if t.in_directive:
            continue
        if t.kind in (TokenKind.COMMENT, TokenKind.WHITESPACE):
            continue
        yield t


def cyclomatic_complexity(tokens: Sequence[Token]) -> int:
    """1 + number of decision tokens.

    `default` counts only as a switch label (next significant token is `:`),
    which keeps C++ `= default;` out of the tally.
    """
    sig = list(_significant(tokens))
    cc = 1
    for idx, t in enumerate(sig):
        if t.kind is TokenKind.KEYWORD:
            if t.text in _DECISION_KEYWORDS:
                cc += 1
            elif t.text == "default":
                nxt = sig[idx + 1] if idx + 1 < len(sig) else None
                if nxt is not None and nxt.kind is TokenKind.PUNCTUATOR and nxt.text == ":":
                    cc += 1
        elif t.kind is TokenKind.PUNCTUATOR and t.text in _DECISION_PUNCTUATORS:
            cc += 1
    return cc


def halstead_metrics(tokens: Sequence[Token]) -> FunctionMetrics:
    """Count operators/operands and derive difficulty.

    Operands: identifiers and every literal. Operators: keywords and
    punctuators, except the closing brackets ) ] } so each bracket pair is
    counted once through its opener.
    """
    operators: dict[str, int] = {}
    operands: dict[str, int] = {}
    for t in _significant(tokens):
        if t.kind in (TokenKind.IDENTIFIER, TokenKind.NUMBER, TokenKind.STRING, TokenKind.CHAR):
            operands[t.text] = operands.get(t.text, 0) + 1
        elif t.kind is TokenKind.KEYWORD:
            operators[t.text] = operators.get(t.text, 0) + 1
        elif t.kind is TokenKind.PUNCTUATOR and t.text not in CLOSING_BRACKETS:
            operators[t.text] = operators.get(t.text, 0) + 1

    n1 = len(operators)
    n2 = len(operands)
    total_ops = sum(operators.values())
    total_opnds = sum(operands.values())
    hd = (n1 / 2.0) * (total_opnds / n2) if n2 > 0 else 0.0
    return FunctionMetrics(
        cc=cyclomatic_complexity(tokens),
        n1=n1,
        n2=n2,
        total_operators=total_ops,
        total_operands=total_opnds,
        hd=hd,
    )


def derive_bins(
    values: Sequence[float],
    feature: str,
    coverage: float = 0.85,
    bin_width: float = 1.0,
) -> BinningScheme:
    """Build contiguous bins of fixed width from 1 until they cover `coverage`.

    Values whose integer part is 0 are dropped first (not representative);
    the bin sequence stops at the first bin where the cumulative share of the
    retained values reaches the coverage target. Values beyond the last bin
    are later Discarded by assign_class.
    """
    if not values:
        raise ValueError("values must be non-empty")
    if not (0.0 < coverage <= 1.0):
        raise ValueError("coverage must be in (0,1]")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")

    retained = [v for v in values if int(v) != 0]
    if not retained:
        raise ValueError("all values discarded (integer part 0); nothing to bin")

    total = len(retained)
    boundaries: list[tuple[float, float]] = []
    covered = 0
    lo = 1.0
    while covered / total < coverage:
        hi = lo + bin_width
        covered += sum(1 for v in retained if lo <= v < hi)
        boundaries.append((lo, hi))
        if lo > max(retained):  # safety: coverage unreachable past the data
            break
        lo = hi

    return BinningScheme(
        feature=feature,
        boundaries=tuple(boundaries),
        coverage=coverage,
        discarded_rule=(
            "values with integer part 0 are discarded; values beyond the last "
            "bin are discarded at assignment"
        ),
    )


def assign_class(value: float, scheme: BinningScheme):
    """0-based index of the containing interval, or DISCARDED."""
    for idx, (lo, hi) in enumerate(scheme.boundaries):
        if lo <= value < hi:
            return idx
    return DISCARDED
