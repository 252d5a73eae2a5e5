"""Parsing, validation, and repair of structured reranker responses.

A well-formed response wraps its reasoning in ``<think>…</think>`` and the
ranking in ``<answer>…</answer>``, the answer body being a descending list of
local passage indices like ``[2] > [1] > [3]``.  Real model output is messy,
so extraction is split into a strict grammar check (used for reward gating)
and a lenient repair path (used for inference, which must always produce a
full permutation).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Sequence

from .types import RankedList, as_id_tuple

_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_INDEX_RE = re.compile(r"\[(\d+)\]")
_STRICT_RE = re.compile(r"^\s*\[\d+\](?:\s*>\s*\[\d+\])*\s*$")


class FormatStatus(enum.Enum):
    """Eq.-style three-way format gate for a model response."""

    BOTH_GOOD = "both_good"      # tags present and answer passes the strict grammar
    OUTPUT_ONLY = "output_only"  # both tag pairs present, answer content malformed
    BAD = "bad"                  # anything else


@dataclass(frozen=True)
class ModelResponse:
    raw: str
    think: str | None
    answer: str | None
    format_status: FormatStatus


@dataclass(frozen=True)
class RepairReport:
    """Counts of what the lenient ranking repair had to do."""

    kept: int = 0          # valid tokens honored from the answer
    out_of_range: int = 0  # tokens outside 1..m, dropped
    duplicates: int = 0    # repeated tokens, dropped (first occurrence wins)
    appended: int = 0      # indices missing from the answer, appended in list order

    @property
    def clean(self) -> bool:
        return self.out_of_range == 0 and self.duplicates == 0 and self.appended == 0

    @property
    def full_repair(self) -> bool:
        """True when no token was usable and the result is the identity order."""
        return self.kept == 0 and self.appended > 0


def extract_indices(text: str) -> list[int]:
    """All bracketed integers in order of appearance."""
    return [int(m) for m in _INDEX_RE.findall(text)]


def validate_answer_grammar(answer: str, m: int) -> bool:
    """Strict check: ``[int] ( > [int] )*`` covering exactly the indices 1..m.

    Requires every index in range, no duplicates, and all m indices present.
    This is the gate used for format rewards; inference parsing stays lenient.
    """
    if m < 1 or answer is None:
        return False
    if not _STRICT_RE.match(answer):
        return False
    indices = extract_indices(answer)
    if len(indices) != m or len(set(indices)) != m:
        return False
    return all(1 <= k <= m for k in indices)


def parse_response(raw: str, m: int | None = None) -> ModelResponse:
    """Extract think/answer from the first matching tag pairs; never raises.

    When the true window size ``m`` is known, the strict grammar is checked
    against it; otherwise m is inferred as the largest bracketed index, so a
    complete self-consistent answer still classifies as BOTH_GOOD.
    """
    raw = raw if isinstance(raw, str) else str(raw)
    think_match = _THINK_RE.search(raw)
    answer_match = _ANSWER_RE.search(raw)
    think = think_match.group(1) if think_match else None
    answer = answer_match.group(1) if answer_match else None

    if think is None or answer is None:
        status = FormatStatus.BAD
    else:
        check_m = m if m is not None else max(extract_indices(answer), default=0)
        if validate_answer_grammar(answer, check_m):
            status = FormatStatus.BOTH_GOOD
        else:
            status = FormatStatus.OUTPUT_ONLY
    return ModelResponse(raw=raw, think=think, answer=answer, format_status=status)


def ranking_source(response: ModelResponse) -> str:
    """Text to mine ranking tokens from: the answer body when present,
    otherwise the raw response with the think block removed (indices cited
    mid-reasoning should not outrank an explicit trailing ranking)."""
    if response.answer is not None:
        return response.answer
    return _THINK_RE.sub("", response.raw, count=1)


def parse_ranking(answer: str, window_ids: Sequence[str]) -> tuple[RankedList, RepairReport]:
    """Lenient extraction of a ranking over ``window_ids`` (total via repair).

    Repairs, in order: drop indices outside 1..m, drop duplicates keeping the
    first occurrence, append missing indices in their original window order.
    The result is always a permutation of ``window_ids``; an answer with zero
    usable tokens degrades to the identity permutation.
    """
    ids = as_id_tuple(window_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("window_ids must be unique")
    m = len(ids)

    out_of_range = duplicates = 0
    order: list[int] = []
    seen: set[int] = set()
    for k in extract_indices(answer or ""):
        if not 1 <= k <= m:
            out_of_range += 1
        elif k in seen:
            duplicates += 1
        else:
            seen.add(k)
            order.append(k)

    kept = len(order)
    missing = [k for k in range(1, m + 1) if k not in seen]
    order.extend(missing)

    report = RepairReport(
        kept=kept,
        out_of_range=out_of_range,
        duplicates=duplicates,
        appended=len(missing),
    )
    return RankedList(tuple(ids[k - 1] for k in order)), report
