"""Ranking metrics (NDCG@k, Recall@k, RBO) and the format-gated ranking reward.

The reward for a rollout ranking combines three views of quality against a
labeled training list:

    r_m = NDCG@10  +  phi * Recall@10  +  gamma * RBO(rollout, gold)

and is gated by the response's format status: a response with well-formed
tags and answer grammar earns r_m, one with intact tags but a malformed
answer earns 0, anything else earns -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .parsing import FormatStatus
from .types import as_id_tuple

#: Per-query relevance judgments: passage id -> integer grade >= 0.
#: Ids missing from the mapping count as grade 0.
Judgments = Mapping[str, int]

DEFAULT_PHI = 0.2
DEFAULT_GAMMA = 0.1
DEFAULT_RBO_P = 0.9
DEFAULT_CUTOFF = 10


@dataclass(frozen=True)
class RewardParams:
    """Weights and constants of the multi-view reward."""

    phi: float = DEFAULT_PHI      # weight of Recall@k
    gamma: float = DEFAULT_GAMMA  # weight of RBO
    p: float = DEFAULT_RBO_P      # RBO persistence
    k: int = DEFAULT_CUTOFF

    def __post_init__(self):
        if self.phi < 0 or self.gamma < 0:
            raise ValueError("phi and gamma must be >= 0")
        if not 0.0 < self.p < 1.0:
            raise ValueError("RBO persistence p must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("cutoff k must be >= 1")


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-rollout reward decomposition.

    ``final`` and ``format_status`` are populated once the format gate has
    been applied; a breakdown fresh out of :func:`multi_view_reward` carries
    the metric components and r_m only.
    """

    ndcg: float
    recall: float
    rbo: float
    r_m: float
    format_status: FormatStatus | None = None
    final: float | None = None


def _gain(grade: int) -> float:
    return float(2 ** grade - 1)


def ndcg_at_k(ranked: Sequence[str], judgments: Judgments, k: int) -> float:
    """Normalized discounted cumulative gain at cutoff k.

    Gain 2^grade - 1 with 1/log2(rank+1) discount; the ideal ordering sorts
    all judged items by grade descending (tie order cannot affect the ideal
    value since equal grades share a gain).  Returns 0 when no item has a
    positive grade.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = as_id_tuple(ranked)
    dcg = 0.0
    for i, pid in enumerate(ids[:k], start=1):
        grade = judgments.get(pid, 0)
        if grade > 0:
            dcg += _gain(grade) / math.log2(i + 1)

    ideal_grades = sorted((g for g in judgments.values() if g > 0), reverse=True)
    if not ideal_grades:
        return 0.0
    idcg = sum(
        _gain(g) / math.log2(i + 1) for i, g in enumerate(ideal_grades[:k], start=1)
    )
    return dcg / idcg


def recall_at_k(ranked: Sequence[str], judgments: Judgments, k: int) -> float:
    """Fraction of all positively judged ids appearing in the first k ranks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = {pid for pid, g in judgments.items() if g > 0}
    if not relevant:
        return 0.0
    hits = sum(1 for pid in as_id_tuple(ranked)[:k] if pid in relevant)
    return hits / len(relevant)


def rbo(rollout: Sequence[str], gold: Sequence[str], p: float = DEFAULT_RBO_P) -> float:
    """Rank-biased overlap between two permutations of the same id set.

    Truncated form: (1-p) * sum_{d=1..L} p^(d-1) * |rollout[:d] & gold[:d]| / d.
    Top-heavy: early agreement dominates; the maximum attainable value for
    identical lists of length L is 1 - p^L.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("RBO persistence p must lie in (0, 1)")
    a = as_id_tuple(rollout)
    b = as_id_tuple(gold)
    if len(a) != len(b) or set(a) != set(b):
        raise ValueError("rollout and gold must be permutations of the same id set")

    seen_a: set[str] = set()
    seen_b: set[str] = set()
    overlap = 0
    total = 0.0
    for d in range(1, len(a) + 1):
        x, y = a[d - 1], b[d - 1]
        if x == y:
            overlap += 1
        else:
            if x in seen_b:
                overlap += 1
            if y in seen_a:
                overlap += 1
            seen_a.add(x)
            seen_b.add(y)
        total += p ** (d - 1) * overlap / d
    return (1.0 - p) * total


def combine_reward(ndcg: float, recall: float, rbo_value: float, params: RewardParams) -> float:
    """Weighted multi-view combination; strictly increasing in each component
    whenever its weight is positive."""
    return ndcg + params.phi * recall + params.gamma * rbo_value


def multi_view_reward(
    rollout: Sequence[str],
    judgments: Judgments,
    gold: Sequence[str],
    params: RewardParams | None = None,
) -> RewardBreakdown:
    """Metric components and r_m for a rollout ranking (no format gate yet)."""
    params = params or RewardParams()
    ndcg = ndcg_at_k(rollout, judgments, params.k)
    recall = recall_at_k(rollout, judgments, params.k)
    overlap = rbo(rollout, gold, params.p)
    return RewardBreakdown(
        ndcg=ndcg,
        recall=recall,
        rbo=overlap,
        r_m=combine_reward(ndcg, recall, overlap, params),
    )


def final_reward(format_status: FormatStatus, r_m: float) -> float:
    """Format gate: full r_m only for well-formed responses, 0 when only the
    tag structure survived, -1 otherwise."""
    if format_status is FormatStatus.BOTH_GOOD:
        return r_m
    if format_status is FormatStatus.OUTPUT_ONLY:
        return 0.0
    return -1.0


def gated_reward(
    format_status: FormatStatus,
    rollout: Sequence[str],
    judgments: Judgments,
    gold: Sequence[str],
    params: RewardParams | None = None,
) -> RewardBreakdown:
    """Full breakdown: metric components plus the format-gated final reward."""
    breakdown = multi_view_reward(rollout, judgments, gold, params)
    return RewardBreakdown(
        ndcg=breakdown.ndcg,
        recall=breakdown.recall,
        rbo=breakdown.rbo,
        r_m=breakdown.r_m,
        format_status=format_status,
        final=final_reward(format_status, breakdown.r_m),
    )
