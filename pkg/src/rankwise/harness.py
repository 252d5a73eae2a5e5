"""Command layer tying the pieces together: reranking runs, metric reports,
reward computation, filtering, synthesis, and latency measurement.

Reports render both as aligned text and as flat ``key=value`` lines (one
metric per line) for scripting; the machine-readable form round-trips.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import Backend
from .errors import RerankError
from .io import (
    DatasetBundle,
    load_qrels,
    load_records,
    load_run,
    read_jsonl,
    write_jsonl,
    write_records,
    write_run,
)
from .metrics import RewardParams, gated_reward, ndcg_at_k
from .parsing import FormatStatus, parse_ranking, parse_response, ranking_source
from .prompts import PromptTemplate
from .synthesis import (
    DEFAULT_CONSISTENCY_ALPHA,
    FilterReport,
    SynthesisRecord,
    SynthesisReport,
    self_consistency_filter,
    synthesize_records,
)
from .training import GrpoParams, GrpoResult, Rollout, RolloutGroup, group_advantages, grpo_loss
from .types import RankedList
from .windows import QueryTrace, WindowParams, rerank_query

logger = logging.getLogger(__name__)


def kv_render(pairs: Sequence[tuple[str, object]]) -> str:
    return "\n".join(f"{key}={value}" for key, value in pairs) + "\n"


def kv_parse(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# rerank
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    k: int = 10
    per_query_ndcg: dict[str, float] = field(default_factory=dict)
    per_query_latency: dict[str, float] = field(default_factory=dict)
    per_query_calls: dict[str, int] = field(default_factory=dict)
    per_query_tokens: dict[str, int | None] = field(default_factory=dict)
    format_failures: int = 0
    repairs: dict[str, int] = field(default_factory=lambda: {
        "out_of_range": 0, "duplicates": 0, "appended": 0,
    })
    skipped: list[str] = field(default_factory=list)
    missing_qrels: list[str] = field(default_factory=list)

    @property
    def mean_ndcg(self) -> float | None:
        if not self.per_query_ndcg:
            return None
        return sum(self.per_query_ndcg.values()) / len(self.per_query_ndcg)

    def kv_lines(self) -> list[tuple[str, object]]:
        pairs: list[tuple[str, object]] = [("k", self.k)]
        if self.per_query_ndcg:
            pairs.append((f"mean_ndcg@{self.k}", repr(self.mean_ndcg)))
        pairs.append(("queries_evaluated", len(self.per_query_ndcg)))
        pairs.append(("queries_skipped", len(self.skipped)))
        pairs.append(("queries_missing_qrels", len(self.missing_qrels)))
        pairs.append(("format_failures", self.format_failures))
        for name, count in sorted(self.repairs.items()):
            pairs.append((f"repairs.{name}", count))
        for qid in sorted(self.per_query_ndcg):
            pairs.append((f"query.{qid}.ndcg@{self.k}", repr(self.per_query_ndcg[qid])))
        return pairs

    def render(self) -> str:
        lines = [f"reranked {len(self.per_query_latency)} queries"]
        if self.per_query_ndcg:
            lines.append(f"mean NDCG@{self.k}: {self.mean_ndcg:.4f} "
                         f"over {len(self.per_query_ndcg)} judged queries")
        if self.skipped:
            lines.append(f"skipped (backend failures): {len(self.skipped)}")
        if self.missing_qrels:
            lines.append(f"queries without qrels (excluded from mean): {len(self.missing_qrels)}")
        lines.append(f"format failures: {self.format_failures}  repairs: {self.repairs}")
        return "\n".join(lines)


def _merge_trace(report: RunReport, trace: QueryTrace):
    report.per_query_latency[trace.qid] = trace.duration_s
    report.per_query_calls[trace.qid] = trace.calls
    token_counts = [w.output_tokens for w in trace.windows]
    report.per_query_tokens[trace.qid] = (
        sum(token_counts) if all(t is not None for t in token_counts) else None
    )
    report.format_failures += trace.format_failures
    for name, count in trace.repairs.items():
        report.repairs[name] += count


def cmd_rerank(
    bundle: DatasetBundle,
    backend: Backend,
    params: WindowParams | None = None,
    out_path: str | Path | None = None,
    k: int = 10,
    strict: bool = False,
    concurrency: int = 1,
    template: PromptTemplate | None = None,
    max_passage_chars: int | None = None,
    tag: str = "rankwise",
) -> tuple[dict[str, RankedList], RunReport]:
    """Rerank every query in the bundle.

    Backend failures are fatal under ``strict``; otherwise the query is
    skipped and keeps its retriever order in the output run.  Results are
    assembled in qid order regardless of concurrency.
    """
    params = params or WindowParams()
    report = RunReport(k=k)
    qids = sorted(bundle.run)

    def work(qid: str):
        query = bundle.queries[qid]
        candidates = bundle.run[qid].truncated(params.n)
        return rerank_query(
            query, candidates, bundle.corpus, backend, params,
            template=template, max_passage_chars=max_passage_chars,
        )

    def run_all():
        if concurrency > 1:
            with ThreadPoolExecutor(max_workers=concurrency) as pool:
                futures = {qid: pool.submit(work, qid) for qid in qids}
                for qid in qids:
                    try:
                        yield qid, futures[qid].result()
                    except RerankError as exc:
                        yield qid, exc
        else:
            for qid in qids:
                try:
                    yield qid, work(qid)
                except RerankError as exc:
                    yield qid, exc

    rankings: dict[str, RankedList] = {}
    for qid, result in run_all():
        if isinstance(result, RerankError):
            if strict:
                raise result
            logger.warning("query %r skipped: %s", qid, result.cause)
            report.skipped.append(qid)
            rankings[qid] = RankedList(bundle.run[qid].truncated(params.n).ids)
            continue
        ranking, trace = result
        rankings[qid] = ranking
        _merge_trace(report, trace)

    if bundle.qrels is not None:
        for qid in qids:
            if qid in report.skipped:
                continue
            if qid not in bundle.qrels:
                report.missing_qrels.append(qid)
                continue
            report.per_query_ndcg[qid] = ndcg_at_k(rankings[qid], bundle.qrels[qid], k)

    if out_path is not None:
        write_run(out_path, rankings, tag=tag)
    return rankings, report


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    k: int
    per_query: dict[str, float]
    excluded: list[str]  # qids present in the run but absent from qrels

    @property
    def mean(self) -> float | None:
        if not self.per_query:
            return None
        return sum(self.per_query.values()) / len(self.per_query)

    def kv_lines(self) -> list[tuple[str, object]]:
        pairs: list[tuple[str, object]] = [("k", self.k)]
        if self.per_query:
            pairs.append((f"mean_ndcg@{self.k}", repr(self.mean)))
        pairs.append(("queries_evaluated", len(self.per_query)))
        pairs.append(("queries_excluded", len(self.excluded)))
        for qid in sorted(self.per_query):
            pairs.append((f"query.{qid}.ndcg@{self.k}", repr(self.per_query[qid])))
        return pairs

    def render(self) -> str:
        width = max((len(q) for q in self.per_query), default=5)
        lines = [f"{'qid':<{width}}  ndcg@{self.k}"]
        for qid in sorted(self.per_query):
            lines.append(f"{qid:<{width}}  {self.per_query[qid]:.4f}")
        if self.per_query:
            lines.append(f"{'mean':<{width}}  {self.mean:.4f}")
        if self.excluded:
            lines.append(f"excluded (no qrels): {', '.join(sorted(self.excluded))}")
        return "\n".join(lines)


def cmd_eval(run_path: str | Path, qrels_path: str | Path, k: int = 10) -> EvalReport:
    """Score a run file against qrels: per-query and mean NDCG@k.  Queries in
    the run without judgments are excluded from the mean and reported."""
    run = load_run(run_path)
    qrels = load_qrels(qrels_path)
    per_query: dict[str, float] = {}
    excluded: list[str] = []
    for qid, candidates in run.items():
        if qid not in qrels:
            excluded.append(qid)
            continue
        per_query[qid] = ndcg_at_k(candidates.ids, qrels[qid], k)
    return EvalReport(k=k, per_query=per_query, excluded=excluded)


# ---------------------------------------------------------------------------
# reward
# ---------------------------------------------------------------------------


def cmd_reward(
    rollouts_path: str | Path,
    records_path: str | Path,
    params: RewardParams | None = None,
    out_path: str | Path | None = None,
    grpo_params: GrpoParams | None = None,
) -> tuple[list[dict], list[str], dict[str, GrpoResult]]:
    """Score rollouts against their labeled training lists.

    Each rollout row carries qid, group, and either a raw ``response`` (parsed
    and format-gated) or an explicit ``ranking`` id list (which must be a
    permutation of the record's ids).  Emits one breakdown row per rollout
    plus a group-normalized advantage.  Rows that additionally carry
    ``policy_logprobs``/``ref_logprobs`` arrays contribute to a per-group
    clipped-surrogate loss under ``grpo_params``.

    Returns (rows, row-level errors, per-group losses).
    """
    params = params or RewardParams()
    records = {r.qid: r for r in load_records(records_path)}

    rows: list[dict] = []
    errors: list[str] = []
    logprob_rollouts: dict[str, list[Rollout]] = {}
    for line_no, obj in read_jsonl(rollouts_path):
        qid = str(obj.get("qid", ""))
        record = records.get(qid)
        if record is None:
            errors.append(f"line {line_no}: qid {qid!r} has no labeled record")
            continue
        ids = [p.id for p in record.passages]
        if "response" in obj:
            parsed = parse_response(str(obj["response"]), m=len(ids))
            ranking, _ = parse_ranking(ranking_source(parsed), ids)
            status = parsed.format_status
        elif "ranking" in obj:
            candidate = [str(i) for i in obj["ranking"]]
            if sorted(candidate) != sorted(ids):
                errors.append(f"line {line_no}: ranking is not a permutation of record {qid!r}")
                continue
            ranking = RankedList(tuple(candidate))
            status = FormatStatus(str(obj.get("format", "both_good")))
        else:
            errors.append(f"line {line_no}: rollout needs a 'response' or 'ranking' field")
            continue

        group = str(obj.get("group", qid))
        breakdown = gated_reward(status, ranking, record.pointwise, record.label.gold, params)
        rows.append(
            {
                "qid": qid,
                "group": group,
                "ndcg": breakdown.ndcg,
                "recall": breakdown.recall,
                "rbo": breakdown.rbo,
                "r_m": breakdown.r_m,
                "final": breakdown.final,
                "format": status.value,
            }
        )
        if "policy_logprobs" in obj and "ref_logprobs" in obj:
            try:
                logprob_rollouts.setdefault(group, []).append(
                    Rollout(
                        reward=breakdown.final,
                        policy_logprobs=obj["policy_logprobs"],
                        ref_logprobs=obj["ref_logprobs"],
                    )
                )
            except ValueError as exc:
                errors.append(f"line {line_no}: bad log-probabilities: {exc}")

    by_group: dict[str, list[int]] = {}
    for idx, row in enumerate(rows):
        by_group.setdefault(row["group"], []).append(idx)
    for indices in by_group.values():
        advantages = group_advantages([rows[i]["final"] for i in indices])
        for i, advantage in zip(indices, advantages):
            rows[i]["advantage"] = float(advantage)

    losses: dict[str, GrpoResult] = {}
    for group, rollouts in logprob_rollouts.items():
        if len(rollouts) != len(by_group.get(group, [])):
            continue  # mixed rows: loss needs log-probs on every rollout of the group
        rollout_group = RolloutGroup(rollouts)
        rollout_group.compute_advantages()
        losses[group] = grpo_loss(rollout_group, grpo_params)

    if out_path is not None:
        write_jsonl(out_path, rows)
    return rows, errors, losses


# ---------------------------------------------------------------------------
# filter / synthesize
# ---------------------------------------------------------------------------


def cmd_filter(
    records_path: str | Path,
    alpha: float = DEFAULT_CONSISTENCY_ALPHA,
    out_path: str | Path | None = None,
) -> tuple[list[SynthesisRecord], FilterReport]:
    records = load_records(records_path)
    kept, report = self_consistency_filter(records, alpha)
    if out_path is not None:
        write_records(out_path, kept)
    return kept, report


def cmd_synthesize(
    input_path: str | Path,
    backend: Backend,
    out_path: str | Path | None = None,
    seed: int = 0,
    concurrency: int = 1,
) -> tuple[list[SynthesisRecord], SynthesisReport]:
    inputs = [obj for _, obj in read_jsonl(input_path)]
    records, report = synthesize_records(
        inputs, backend, seed=seed, concurrency=concurrency
    )
    if out_path is not None:
        write_records(out_path, records)
    return records, report


# ---------------------------------------------------------------------------
# latency
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyReport:
    queries: int
    repeats: int
    mean_s: float
    p50_s: float
    p95_s: float
    mean_calls: float
    output_tokens: int | None = None

    def kv_lines(self) -> list[tuple[str, object]]:
        pairs: list[tuple[str, object]] = [
            ("queries", self.queries),
            ("repeats", self.repeats),
            ("mean_s", repr(self.mean_s)),
            ("p50_s", repr(self.p50_s)),
            ("p95_s", repr(self.p95_s)),
            ("mean_calls", repr(self.mean_calls)),
        ]
        if self.output_tokens is not None:
            pairs.append(("output_tokens", self.output_tokens))
        return pairs

    def to_kv_text(self) -> str:
        return kv_render(self.kv_lines())

    @classmethod
    def from_kv_text(cls, text: str) -> "LatencyReport":
        kv = kv_parse(text)
        return cls(
            queries=int(kv["queries"]),
            repeats=int(kv["repeats"]),
            mean_s=float(kv["mean_s"]),
            p50_s=float(kv["p50_s"]),
            p95_s=float(kv["p95_s"]),
            mean_calls=float(kv["mean_calls"]),
            output_tokens=int(kv["output_tokens"]) if "output_tokens" in kv else None,
        )

    def render(self) -> str:
        lines = [
            f"latency over {self.queries} queries x {self.repeats} repeats (seconds/query)",
            f"  mean {self.mean_s:.4f}  p50 {self.p50_s:.4f}  p95 {self.p95_s:.4f}",
            f"  backend calls/query: {self.mean_calls:.1f}",
        ]
        if self.output_tokens is not None:
            lines.append(f"  output tokens (total): {self.output_tokens}")
        return "\n".join(lines)


def cmd_latency(
    bundle: DatasetBundle,
    backend: Backend,
    params: WindowParams | None = None,
    repeats: int = 1,
    concurrency: int = 1,
    strict: bool = True,
) -> LatencyReport:
    """Measure wall-clock seconds per query over repeated full rerank passes.

    Token counts are aggregated when the backend reports usage."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    params = params or WindowParams()
    durations: list[float] = []
    calls: list[int] = []
    tokens: list[int | None] = []
    for _ in range(repeats):
        _, report = cmd_rerank(
            bundle, backend, params=params, strict=strict, concurrency=concurrency
        )
        for qid in report.per_query_latency:
            durations.append(report.per_query_latency[qid])
            calls.append(report.per_query_calls[qid])
            tokens.append(report.per_query_tokens.get(qid))

    arr = np.asarray(durations, dtype=np.float64)
    total_tokens = sum(t for t in tokens if t is not None) if any(
        t is not None for t in tokens
    ) else None
    return LatencyReport(
        queries=len(bundle.run),
        repeats=repeats,
        mean_s=float(arr.mean()),
        p50_s=float(np.percentile(arr, 50)),
        p95_s=float(np.percentile(arr, 95)),
        mean_calls=float(np.mean(calls)) if calls else 0.0,
        output_tokens=total_tokens,
    )
