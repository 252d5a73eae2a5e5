"""Teacher-driven construction of listwise training records.

For each input query the pipeline selects positives (and optionally hard
negatives) from candidate pools with domain-specific teacher prompts, fills
the list with random negatives up to the training cap, asks the teacher for a
reasoning chain plus gold ranking (without revealing the gold answer), and
scores each record's self-consistency as NDCG@10 of the gold list against the
pointwise labels.  Records below the consistency threshold are filtered out.

All randomness is derived from (seed, qid), so record processing can run
concurrently while output stays byte-identical.
"""

from __future__ import annotations

import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .backends import Backend, ChatRequest
from .errors import RecordSkipped
from .metrics import ndcg_at_k
from .parsing import RepairReport, extract_indices, parse_ranking, parse_response, ranking_source
from .prompts import (
    DOMAINS,
    PromptTemplate,
    build_listwise_messages,
    build_selection_prompt,
    hard_negatives_template,
    positives_template,
)
from .types import Passage, RankedList

logger = logging.getLogger(__name__)

TRAINING_LIST_CAP = 20
CANDIDATE_POOL_LIMIT = 40
DEFAULT_CONSISTENCY_ALPHA = 0.4

_SENTENCE_END_RE = re.compile(r"[.!?][\"')\]]*\s")


@dataclass(frozen=True)
class ListwiseLabel:
    """Teacher output for a training list: reasoning chain + gold ranking."""

    think: str
    gold: RankedList

    def __post_init__(self):
        if len(self.gold) == 0:
            raise ValueError("gold ranking must be non-empty")


@dataclass
class SynthesisRecord:
    """One training example: a capped passage list with pointwise labels, the
    teacher's listwise label, and its self-consistency score."""

    qid: str
    query: str
    domain: str
    passages: tuple[Passage, ...]
    pointwise: dict[str, int]
    label: ListwiseLabel
    consistency: float | None = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}; expected one of {DOMAINS}")
        if len(self.passages) > TRAINING_LIST_CAP:
            raise ValueError(f"training list exceeds cap of {TRAINING_LIST_CAP}")
        ids = {p.id for p in self.passages}
        if not self.label.gold.is_permutation_of(ids):
            raise ValueError("gold list is not a permutation of the training list ids")
        if self.consistency is not None and not 0.0 <= self.consistency <= 1.0:
            raise ValueError("consistency must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "qid": self.qid,
            "query": self.query,
            "domain": self.domain,
            "passages": [
                {"id": p.id, "text": p.text, **({"source": p.source} if p.source else {})}
                for p in self.passages
            ],
            "pointwise": dict(self.pointwise),
            "think": self.label.think,
            "gold": list(self.label.gold.ids),
            "consistency": self.consistency,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "SynthesisRecord":
        passages = tuple(
            Passage(d["id"], d["text"], d.get("source")) for d in data["passages"]
        )
        return cls(
            qid=data["qid"],
            query=data["query"],
            domain=data["domain"],
            passages=passages,
            pointwise={str(k): int(v) for k, v in data["pointwise"].items()},
            label=ListwiseLabel(think=data.get("think", ""), gold=RankedList(tuple(data["gold"]))),
            consistency=data.get("consistency"),
        )


# ---------------------------------------------------------------------------
# Document splitting
# ---------------------------------------------------------------------------


def split_document(text: str, max_chars: int | None = None) -> list[str]:
    """Split a document into passages at blank lines.

    Segments are trimmed and empties dropped.  When ``max_chars`` is set,
    oversize segments are further cut at the nearest sentence boundary (or
    hard-wrapped when a single sentence exceeds the limit).
    """
    segments = [s.strip() for s in re.split(r"\n\s*\n", text)]
    segments = [s for s in segments if s]
    if max_chars is None:
        return segments
    out: list[str] = []
    for segment in segments:
        out.extend(_split_long(segment, max_chars))
    return out


def _split_long(segment: str, max_chars: int) -> list[str]:
    parts = []
    rest = segment
    while len(rest) > max_chars:
        window = rest[: max_chars + 1]
        cut = 0
        for match in _SENTENCE_END_RE.finditer(window):
            cut = match.end()
        if cut <= 0:
            space = window.rfind(" ")
            cut = space if space > 0 else max_chars
        parts.append(rest[:cut].strip())
        rest = rest[cut:].strip()
    if rest:
        parts.append(rest)
    return [p for p in parts if p]


# ---------------------------------------------------------------------------
# Teacher selection calls
# ---------------------------------------------------------------------------


def _parse_selection(raw: str, candidates: Sequence[Passage], what: str) -> set[str]:
    """Map bracketed local indices in a selection response to candidate ids.

    The literal answer "None" means the empty set; out-of-range indices are
    dropped with a warning; an unparseable response degrades to the empty set.
    """
    parsed = parse_response(raw)
    text = ranking_source(parsed).strip()
    if text == "None":
        return set()
    indices = extract_indices(text)
    if not indices:
        logger.warning("unparseable %s selection response: %.80r", what, raw)
        return set()
    selected: set[str] = set()
    for k in indices:
        if 1 <= k <= len(candidates):
            selected.add(candidates[k - 1].id)
        else:
            logger.warning("%s selection index [%d] out of range 1..%d", what, k, len(candidates))
    return selected


def _run_selection(
    template: PromptTemplate,
    query_text: str,
    gold_answer: str,
    candidates: Sequence[Passage],
    backend: Backend,
    what: str,
) -> set[str]:
    if len(candidates) > CANDIDATE_POOL_LIMIT:
        raise ValueError(
            f"candidate pool of {len(candidates)} exceeds the limit of {CANDIDATE_POOL_LIMIT}"
        )
    prompt = build_selection_prompt(template, query_text, gold_answer, [p.text for p in candidates])
    response = backend.complete(ChatRequest.single_user(prompt))
    return _parse_selection(response.text, candidates, what)


def select_positives(
    query_text: str,
    gold_answer: str,
    candidates: Sequence[Passage],
    backend: Backend,
    domain: str = "complex-qa",
) -> set[str]:
    """Teacher call: ids of candidates judged relevant, via the domain prompt."""
    return _run_selection(
        positives_template(domain), query_text, gold_answer, candidates, backend, "positives"
    )


def select_hard_negatives(
    query_text: str,
    gold_answer: str,
    candidates: Sequence[Passage],
    backend: Backend,
    exclude: set[str] = frozenset(),
) -> set[str]:
    """Teacher call: ids of topically-similar-but-unhelpful candidates.
    Ids overlapping `exclude` (previously selected positives) are dropped."""
    selected = _run_selection(
        hard_negatives_template(), query_text, gold_answer, candidates, backend, "hard negatives"
    )
    overlap = selected & set(exclude)
    for pid in sorted(overlap):
        logger.warning("hard negative %r overlaps a selected positive; dropped", pid)
    return selected - overlap


# ---------------------------------------------------------------------------
# Training list assembly and labeling
# ---------------------------------------------------------------------------


def assemble_training_list(
    positives: Sequence[Passage],
    hard_negatives: Sequence[Passage],
    negatives: Sequence[Passage],
    cap: int = TRAINING_LIST_CAP,
    rng: random.Random | None = None,
) -> tuple[list[Passage], dict[str, int]]:
    """Compose the capped training list: all positives, then hard negatives,
    then seeded-random negatives until the cap; final order seeded-shuffled.

    Returns the list and its pointwise labels (1 for positives, else 0).
    Raises on zero positives: such a record has no meaningful NDCG.
    """
    rng = rng or random.Random(0)
    ids = [p.id for group in (positives, hard_negatives, negatives) for p in group]
    if len(set(ids)) != len(ids):
        raise ValueError("positives, hard negatives, and negatives must be disjoint")
    if not positives:
        raise ValueError("cannot assemble a training list with zero positives")

    chosen = list(positives[:cap])
    if len(positives) > cap:
        logger.warning("truncated %d positives to the cap of %d", len(positives), cap)
    chosen.extend(hard_negatives[: max(0, cap - len(chosen))])
    room = cap - len(chosen)
    if room > 0 and negatives:
        chosen.extend(rng.sample(list(negatives), min(room, len(negatives))))
    rng.shuffle(chosen)

    positive_ids = {p.id for p in positives}
    labels = {p.id: (1 if p.id in positive_ids else 0) for p in chosen}
    return chosen, labels


def generate_listwise_label(
    query_text: str,
    training_list: Sequence[Passage],
    backend: Backend,
) -> tuple[ListwiseLabel, RepairReport]:
    """Teacher call over the multi-turn ranking conversation (gold answer
    withheld).  The ranking is recovered leniently; repair counts are
    returned so callers can log labeling quality."""
    if not training_list:
        raise ValueError("training list must be non-empty")
    messages = build_listwise_messages(query_text, [p.text for p in training_list])
    response = backend.complete(ChatRequest.from_dicts(messages))
    if not response.text.strip():
        raise RecordSkipped("empty_response", "teacher returned empty ranking response")
    parsed = parse_response(response.text, m=len(training_list))
    gold, repair = parse_ranking(ranking_source(parsed), [p.id for p in training_list])
    if not repair.clean:
        logger.warning(
            "listwise label needed repair (kept=%d dup=%d oor=%d appended=%d)",
            repair.kept, repair.duplicates, repair.out_of_range, repair.appended,
        )
    return ListwiseLabel(think=parsed.think or "", gold=gold), repair


# ---------------------------------------------------------------------------
# Self-consistency filtering
# ---------------------------------------------------------------------------


@dataclass
class FilterReport:
    alpha: float
    kept: dict[str, int] = field(default_factory=dict)     # per domain
    dropped: dict[str, int] = field(default_factory=dict)  # per domain

    @property
    def total_kept(self) -> int:
        return sum(self.kept.values())

    @property
    def total_dropped(self) -> int:
        return sum(self.dropped.values())

    def lines(self) -> list[str]:
        out = [f"self-consistency filter, alpha={self.alpha}"]
        for domain in sorted(set(self.kept) | set(self.dropped)):
            out.append(
                f"  {domain:<14} kept={self.kept.get(domain, 0):<6} "
                f"dropped={self.dropped.get(domain, 0)}"
            )
        out.append(f"  {'total':<14} kept={self.total_kept:<6} dropped={self.total_dropped}")
        return out


def record_consistency(record: SynthesisRecord) -> float:
    """NDCG@10 of the gold list scored against the record's pointwise labels."""
    return ndcg_at_k(record.label.gold, record.pointwise, 10)


def self_consistency_filter(
    records: Iterable[SynthesisRecord],
    alpha: float = DEFAULT_CONSISTENCY_ALPHA,
) -> tuple[list[SynthesisRecord], FilterReport]:
    """Keep records whose consistency is >= alpha (a value exactly at the
    threshold survives).  A record's stored consistency is trusted when
    present; it is recomputed only when missing."""
    report = FilterReport(alpha=alpha)
    kept: list[SynthesisRecord] = []
    for record in records:
        value = record.consistency
        if value is None:
            value = record_consistency(record)
            record.consistency = value
        if value >= alpha:
            kept.append(record)
            report.kept[record.domain] = report.kept.get(record.domain, 0) + 1
        else:
            report.dropped[record.domain] = report.dropped.get(record.domain, 0) + 1
    return kept, report


# ---------------------------------------------------------------------------
# Pipeline driver
# ---------------------------------------------------------------------------


@dataclass
class SynthesisReport:
    processed: int = 0
    emitted: int = 0
    skipped: dict[str, int] = field(default_factory=dict)   # reason -> count
    per_domain: dict[str, int] = field(default_factory=dict)  # domain -> emitted

    def note_skip(self, reason: str):
        self.skipped[reason] = self.skipped.get(reason, 0) + 1

    def lines(self) -> list[str]:
        out = [f"synthesis: processed={self.processed} emitted={self.emitted}"]
        for domain in sorted(self.per_domain):
            out.append(f"  {domain:<14} emitted={self.per_domain[domain]}")
        for reason in sorted(self.skipped):
            out.append(f"  skipped[{reason}]={self.skipped[reason]}")
        return out


def _input_passages(raw: Sequence[Mapping], field_name: str) -> list[Passage]:
    out = []
    for d in raw:
        out.append(Passage(str(d["id"]), str(d["text"]), d.get("source")))
    ids = [p.id for p in out]
    if len(set(ids)) != len(ids):
        raise RecordSkipped("bad_input", f"duplicate passage ids in {field_name}")
    return out


def _process_record(
    raw: Mapping,
    backend: Backend,
    seed: int,
    cap: int,
) -> SynthesisRecord:
    try:
        qid = str(raw["qid"])
        query = str(raw["query"])
        domain = str(raw["domain"])
        gold_answer = str(raw.get("gold_answer", ""))
        candidates = _input_passages(raw["candidates"], "candidates")
        hard_pool = _input_passages(raw.get("hard_negative_candidates", []), "hard pool")
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordSkipped("bad_input", str(exc)) from exc
    if domain not in DOMAINS:
        raise RecordSkipped("bad_input", f"unknown domain {domain!r}")

    pool_ids = {p.id for p in candidates} | {p.id for p in hard_pool}
    if len(pool_ids) != len(candidates) + len(hard_pool):
        raise RecordSkipped("bad_input", "candidate and hard-negative pools share ids")

    try:
        if "positive_ids" in raw:
            positive_ids = {str(i) for i in raw["positive_ids"]} & {p.id for p in candidates}
        else:
            positive_ids = select_positives(query, gold_answer, candidates, backend, domain)

        if "hard_negative_ids" in raw:
            hard_ids = ({str(i) for i in raw["hard_negative_ids"]} & pool_ids) - positive_ids
        elif hard_pool:
            hard_ids = select_hard_negatives(
                query, gold_answer, hard_pool, backend, exclude=positive_ids
            )
        else:
            hard_ids = set()
    except RecordSkipped:
        raise
    except ValueError as exc:
        raise RecordSkipped("too_many_candidates", str(exc)) from exc
    except Exception as exc:
        raise RecordSkipped("backend_failure", str(exc)) from exc

    positives = [p for p in candidates if p.id in positive_ids]
    hard = [p for p in candidates + hard_pool if p.id in hard_ids]
    negatives = [p for p in candidates if p.id not in positive_ids and p.id not in hard_ids]

    rng = random.Random(f"{seed}:{qid}")
    try:
        training_list, pointwise = assemble_training_list(
            positives, hard, negatives, cap=cap, rng=rng
        )
    except ValueError as exc:
        raise RecordSkipped("zero_positives", str(exc)) from exc

    try:
        label, _repair = generate_listwise_label(query, training_list, backend)
    except RecordSkipped:
        raise
    except Exception as exc:
        raise RecordSkipped("backend_failure", str(exc)) from exc

    record = SynthesisRecord(
        qid=qid,
        query=query,
        domain=domain,
        passages=tuple(training_list),
        pointwise=pointwise,
        label=label,
    )
    record.consistency = record_consistency(record)
    return record


def synthesize_records(
    inputs: Iterable[Mapping],
    backend: Backend,
    seed: int = 0,
    cap: int = TRAINING_LIST_CAP,
    concurrency: int = 1,
) -> tuple[list[SynthesisRecord], SynthesisReport]:
    """Run the full labeling pipeline over input records.

    Records are independent and may be processed concurrently; output order
    always follows input order, so results are deterministic for a fixed seed
    and a deterministic backend.
    """
    inputs = list(inputs)
    report = SynthesisReport(processed=len(inputs))
    results: list[SynthesisRecord | RecordSkipped]

    def work(raw: Mapping):
        try:
            return _process_record(raw, backend, seed, cap)
        except RecordSkipped as skip:
            return skip

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(work, inputs))
    else:
        results = [work(raw) for raw in inputs]

    records: list[SynthesisRecord] = []
    for raw, result in zip(inputs, results):
        if isinstance(result, RecordSkipped):
            logger.warning("skipped record %r: %s", raw.get("qid"), result)
            report.note_skip(result.reason)
        else:
            records.append(result)
            report.per_domain[result.domain] = report.per_domain.get(result.domain, 0) + 1
    report.emitted = len(records)
    return records, report
