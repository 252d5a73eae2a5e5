"""File ingestion and emission.

Formats:
  corpus   jsonl, one object per line: {"id", "text", "source"?}
  queries  jsonl: {"qid", "text", "rewritten"?}
  run      whitespace, 6 columns: qid Q0 docid rank score tag
  qrels    whitespace, 4 columns: qid 0 docid grade
  records  jsonl, synthesis records (see synthesis.SynthesisRecord)
  rollout groups  jsonl: {"group", "reward", "policy_logprobs", "ref_logprobs"}

Loaders validate aggressively and name the offending file and line.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import DatasetError
from .synthesis import SynthesisRecord
from .training import Rollout, RolloutGroup
from .types import CandidateList, Passage, Query, RankedList


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_no, object) for every non-blank line."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(str(path), line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DatasetError(str(path), line_no, "expected a JSON object")
            yield line_no, obj


def write_jsonl(path: str | Path, objects: Iterable[Mapping]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for obj in objects:
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> dict[str, Passage]:
    corpus: dict[str, Passage] = {}
    for line_no, obj in read_jsonl(path):
        try:
            passage = Passage(str(obj["id"]), str(obj["text"]), obj.get("source"))
        except (KeyError, ValueError) as exc:
            raise DatasetError(str(path), line_no, f"bad corpus record: {exc}") from exc
        if passage.id in corpus:
            raise DatasetError(str(path), line_no, f"duplicate passage id {passage.id!r}")
        corpus[passage.id] = passage
    return corpus


def load_queries(path: str | Path) -> dict[str, Query]:
    queries: dict[str, Query] = {}
    for line_no, obj in read_jsonl(path):
        try:
            query = Query(str(obj["qid"]), str(obj["text"]), obj.get("rewritten"))
        except (KeyError, ValueError) as exc:
            raise DatasetError(str(path), line_no, f"bad query record: {exc}") from exc
        if query.qid in queries:
            raise DatasetError(str(path), line_no, f"duplicate qid {query.qid!r}")
        queries[query.qid] = query
    return queries


def load_run(path: str | Path, topn: int | None = None) -> dict[str, CandidateList]:
    """Parse a 6-column run file into per-query candidate lists (rank order),
    optionally truncated to the top n entries per query."""
    path = Path(path)
    rows: dict[str, dict[int, tuple[str, float]]] = {}
    seen_docids: dict[str, set[str]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise DatasetError(str(path), line_no, f"expected 6 columns, got {len(parts)}")
            qid, _q0, docid, rank_s, score_s, _tag = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError as exc:
                raise DatasetError(str(path), line_no, f"bad rank/score: {exc}") from exc
            per_query = rows.setdefault(qid, {})
            seen = seen_docids.setdefault(qid, set())
            if rank in per_query:
                raise DatasetError(str(path), line_no, f"duplicate rank {rank} for qid {qid!r}")
            if docid in seen:
                raise DatasetError(str(path), line_no, f"duplicate docid {docid!r} for qid {qid!r}")
            seen.add(docid)
            per_query[rank] = (docid, score)

    out: dict[str, CandidateList] = {}
    for qid, per_query in rows.items():
        entries = tuple(per_query[rank] for rank in sorted(per_query))
        try:
            candidates = CandidateList(qid, entries)
        except ValueError as exc:
            raise DatasetError(str(path), None, str(exc)) from exc
        out[qid] = candidates.truncated(topn) if topn else candidates
    return out


def load_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    path = Path(path)
    qrels: dict[str, dict[str, int]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DatasetError(str(path), line_no, f"expected 4 columns, got {len(parts)}")
            qid, _zero, docid, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError as exc:
                raise DatasetError(str(path), line_no, f"bad grade: {exc}") from exc
            if grade < 0:
                raise DatasetError(str(path), line_no, f"negative grade {grade}")
            per_query = qrels.setdefault(qid, {})
            if docid in per_query:
                raise DatasetError(str(path), line_no, f"duplicate judgment for {qid!r}/{docid!r}")
            per_query[docid] = grade
    return qrels


class DatasetBundle:
    """Corpus, queries, retrieval run, and optional judgments for one dataset."""

    def __init__(
        self,
        corpus: dict[str, Passage],
        queries: dict[str, Query],
        run: dict[str, CandidateList],
        qrels: dict[str, dict[str, int]] | None = None,
    ):
        self.corpus = corpus
        self.queries = queries
        self.run = run
        self.qrels = qrels
        self._validate()

    def _validate(self):
        for qid, candidates in self.run.items():
            if qid not in self.queries:
                raise DatasetError("<run>", None, f"run qid {qid!r} missing from queries")
            for pid in candidates.ids:
                if pid not in self.corpus:
                    raise DatasetError(
                        "<run>", None, f"docid {pid!r} (qid {qid!r}) unresolvable in corpus"
                    )
        if self.qrels:
            for qid in self.qrels:
                if qid not in self.queries:
                    raise DatasetError("<qrels>", None, f"qrels qid {qid!r} missing from queries")

    def oracle_judgments_by_query_text(self) -> dict[str, dict[str, int]]:
        """Judgments re-keyed by (query text, passage text) for mock oracles."""
        if not self.qrels:
            raise ValueError("bundle has no qrels")
        out: dict[str, dict[str, int]] = {}
        for qid, grades in self.qrels.items():
            text_grades = {
                self.corpus[pid].text: grade
                for pid, grade in grades.items()
                if pid in self.corpus
            }
            out[self.queries[qid].text] = text_grades
        return out


def load_dataset(
    corpus_path: str | Path,
    queries_path: str | Path,
    run_path: str | Path,
    qrels_path: str | Path | None = None,
    topn: int | None = 100,
) -> DatasetBundle:
    """Load and cross-validate a full dataset bundle, truncating each query's
    candidates to the top n."""
    return DatasetBundle(
        corpus=load_corpus(corpus_path),
        queries=load_queries(queries_path),
        run=load_run(run_path, topn=topn),
        qrels=load_qrels(qrels_path) if qrels_path else None,
    )


def write_run(
    path: str | Path,
    rankings: Mapping[str, Sequence[str]] | Mapping[str, RankedList],
    tag: str = "rankwise",
) -> None:
    """Write rankings as a 6-column run file with score 1/rank (any strictly
    decreasing score works; the ranking is ordinal)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for qid in sorted(rankings):
            for rank, docid in enumerate(rankings[qid], start=1):
                handle.write(f"{qid} Q0 {docid} {rank} {1.0 / rank:.6f} {tag}\n")


def load_records(path: str | Path) -> list[SynthesisRecord]:
    records = []
    for line_no, obj in read_jsonl(path):
        try:
            records.append(SynthesisRecord.from_json_dict(obj))
        except (KeyError, ValueError, TypeError) as exc:
            raise DatasetError(str(path), line_no, f"bad synthesis record: {exc}") from exc
    return records


def write_records(path: str | Path, records: Iterable[SynthesisRecord]) -> None:
    write_jsonl(path, (r.to_json_dict() for r in records))


def load_rollout_groups(path: str | Path) -> dict[str, RolloutGroup]:
    """Load GRPO rollout groups from jsonl; groups keep file order and each
    holds its rollouts in file order."""
    groups: dict[str, RolloutGroup] = {}
    for line_no, obj in read_jsonl(path):
        try:
            rollout = Rollout(
                reward=float(obj["reward"]),
                policy_logprobs=obj["policy_logprobs"],
                ref_logprobs=obj["ref_logprobs"],
            )
            group_id = str(obj["group"])
        except (KeyError, ValueError, TypeError) as exc:
            raise DatasetError(str(path), line_no, f"bad rollout record: {exc}") from exc
        groups.setdefault(group_id, RolloutGroup()).rollouts.append(rollout)
    return groups
