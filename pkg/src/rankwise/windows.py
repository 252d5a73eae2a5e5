"""Back-to-front sliding-window reranking over a candidate list.

A list of N candidates is reranked in overlapping windows of size w, starting
at the back and stepping toward the front by s positions, so that relevant
passages promoted to the top of one window stay inside the next (overlapping)
window and can bubble all the way forward.  Windows within one query are
strictly sequential; distinct queries can run concurrently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .backends import Backend, ChatRequest
from .errors import RerankError
from .parsing import (
    FormatStatus,
    RepairReport,
    parse_ranking,
    parse_response,
    ranking_source,
)
from .prompts import PromptTemplate, build_rerank_prompt
from .types import CandidateList, Passage, Query, RankedList

DEFAULT_TOPN = 100
DEFAULT_WINDOW = 20
DEFAULT_STRIDE = 10


@dataclass(frozen=True)
class WindowParams:
    """List length bound n, window size w, step size s."""

    n: int = DEFAULT_TOPN
    w: int = DEFAULT_WINDOW
    s: int = DEFAULT_STRIDE

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("list length bound n must be >= 1")
        if self.s < 1:
            raise ValueError("step size s must be >= 1")
        if self.s > self.w:
            raise ValueError("step size s must not exceed window size w")


@dataclass(frozen=True)
class WindowPlan:
    """Half-open index ranges, ordered from the back of the list to the front."""

    ranges: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.ranges)

    def __iter__(self):
        return iter(self.ranges)


def plan_windows(params: WindowParams, list_len: int) -> WindowPlan:
    """Plan the back-to-front pass: starts at list_len - w, descending by s,
    with the final start clamped to 0 so every index is covered."""
    if list_len < 1:
        raise ValueError("list_len must be >= 1")
    if list_len <= params.w:
        return WindowPlan(((0, list_len),))
    ranges: list[tuple[int, int]] = []
    start = list_len - params.w
    while True:
        ranges.append((start, start + params.w))
        if start == 0:
            break
        start = max(0, start - params.s)
    return WindowPlan(tuple(ranges))


def apply_window(
    current: Sequence[str], window_range: tuple[int, int], window_result: Sequence[str]
) -> RankedList:
    """Splice a reranked window back into the list; positions outside the
    range are untouched.  The result must be a permutation of the slice."""
    start, end = window_range
    ids = list(current)
    if not 0 <= start < end <= len(ids):
        raise ValueError(f"window range [{start}, {end}) out of bounds for list of {len(ids)}")
    replacement = list(window_result)
    if sorted(replacement) != sorted(ids[start:end]):
        raise ValueError("window result is not a permutation of the window slice")
    ids[start:end] = replacement
    return RankedList(tuple(ids))


@dataclass
class WindowTrace:
    start: int
    end: int
    raw: str
    format_status: FormatStatus
    repair: RepairReport
    duration_s: float
    output_tokens: int | None = None


@dataclass
class QueryTrace:
    qid: str
    windows: list[WindowTrace] = field(default_factory=list)
    duration_s: float = 0.0

    @property
    def calls(self) -> int:
        return len(self.windows)

    @property
    def format_failures(self) -> int:
        return sum(1 for w in self.windows if w.format_status is not FormatStatus.BOTH_GOOD)

    @property
    def repairs(self) -> dict[str, int]:
        return {
            "out_of_range": sum(w.repair.out_of_range for w in self.windows),
            "duplicates": sum(w.repair.duplicates for w in self.windows),
            "appended": sum(w.repair.appended for w in self.windows),
        }


def rerank_query(
    query: Query,
    candidates: CandidateList,
    corpus: Mapping[str, Passage],
    backend: Backend,
    params: WindowParams | None = None,
    template: PromptTemplate | None = None,
    max_passage_chars: int | None = None,
) -> tuple[RankedList, QueryTrace]:
    """Run the full sliding-window pass for one query.

    Each planned window is prompted with its passages numbered locally 1..m in
    current-list order, the response is parsed (leniently, with repair) and
    spliced back, and the next window proceeds on the updated list.  Prompts
    always use the original query text, never a retrieval-side rewrite.

    Returns the final permutation of the candidate ids and a per-window trace.
    Raises :class:`RerankError` (carrying the partial trace) if the backend
    fails; the caller decides between fail-fast and skip-query.
    """
    params = params or WindowParams()
    if len(candidates) == 0:
        raise ValueError(f"empty candidate list for query {query.qid!r}")
    missing = [pid for pid in candidates.ids if pid not in corpus]
    if missing:
        raise ValueError(f"candidate ids missing from corpus: {missing[:5]}")

    trace = QueryTrace(qid=query.qid)
    current = RankedList(candidates.ids)
    started = time.perf_counter()
    for start, end in plan_windows(params, len(current)):
        window_ids = current.ids[start:end]
        texts = [corpus[pid].text for pid in window_ids]
        prompt = build_rerank_prompt(
            query.text, texts, template=template, max_passage_chars=max_passage_chars
        )
        window_started = time.perf_counter()
        try:
            response = backend.complete(ChatRequest.single_user(prompt))
        except Exception as exc:
            trace.duration_s = time.perf_counter() - started
            raise RerankError(query.qid, exc, trace) from exc

        parsed = parse_response(response.text, m=len(window_ids))
        local_ranking, repair = parse_ranking(ranking_source(parsed), window_ids)
        current = apply_window(current, (start, end), local_ranking)
        trace.windows.append(
            WindowTrace(
                start=start,
                end=end,
                raw=response.text,
                format_status=parsed.format_status,
                repair=repair,
                duration_s=time.perf_counter() - window_started,
                output_tokens=response.completion_tokens,
            )
        )
    trace.duration_s = time.perf_counter() - started
    return current, trace
