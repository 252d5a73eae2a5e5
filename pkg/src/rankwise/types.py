"""Core domain types: passages, queries, candidate lists, and ranked lists."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence


@dataclass(frozen=True)
class Passage:
    """A corpus item. `source` is an optional provenance label."""

    id: str
    text: str
    source: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("passage id must be non-empty")


@dataclass(frozen=True)
class Query:
    """A search query. `rewritten` is an alternate form used only for retrieval."""

    qid: str
    text: str
    rewritten: str | None = None

    def __post_init__(self):
        if not self.qid:
            raise ValueError("query qid must be non-empty")
        if not self.text:
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True)
class CandidateList:
    """Retriever output for one query: (passage id, score) pairs, best first.

    Ids must be unique and scores non-increasing.
    """

    qid: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(i), float(s)) for i, s in self.entries))
        ids = [i for i, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate passage ids in candidates for query {self.qid!r}")
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(f"candidate scores must be non-increasing for query {self.qid!r}")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(i for i, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def truncated(self, n: int) -> "CandidateList":
        return CandidateList(self.qid, self.entries[:n])


@dataclass(frozen=True)
class RankedList(Sequence):
    """An ordered sequence of distinct passage identifiers."""

    ids: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("ranked list contains duplicate ids")

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i):
        got = self.ids[i]
        return RankedList(got) if isinstance(i, slice) else got

    def __iter__(self) -> Iterator[str]:
        return iter(self.ids)

    def __contains__(self, item) -> bool:
        return item in self.ids

    def is_permutation_of(self, other: Sequence[str]) -> bool:
        return set(self.ids) == set(other) and len(self) == len(other)


def as_id_tuple(ranking: Sequence[str]) -> tuple[str, ...]:
    """Accept a RankedList or any sequence of ids; return a plain tuple."""
    if isinstance(ranking, RankedList):
        return ranking.ids
    return tuple(str(i) for i in ranking)
