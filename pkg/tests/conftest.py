import json
import random

import pytest

from rankwise.io import DatasetBundle
from rankwise.types import CandidateList, Passage, Query


def build_bundle(n_queries=50, n_candidates=60, relevant_range=(1, 3), seed=7):
    """Synthetic dataset: unique passage texts (mock oracles key on text),
    binary qrels with few relevant docs scattered anywhere in the list."""
    rng = random.Random(seed)
    corpus, queries, run, qrels = {}, {}, {}, {}
    for qi in range(n_queries):
        qid = f"q{qi:03d}"
        queries[qid] = Query(qid, f"synthetic question {qi} about topic {rng.randrange(10**6)}")
        ids = []
        for ci in range(n_candidates):
            pid = f"{qid}_d{ci:03d}"
            corpus[pid] = Passage(pid, f"body of document {pid} token {rng.randrange(10**9)}")
            ids.append(pid)
        n_rel = rng.randint(*relevant_range)
        qrels[qid] = {pid: 1 for pid in rng.sample(ids, n_rel)}
        entries = tuple((pid, float(n_candidates - i)) for i, pid in enumerate(ids))
        run[qid] = CandidateList(qid, entries)
    return DatasetBundle(corpus, queries, run, qrels)


def write_bundle_files(bundle, directory):
    """Serialize a bundle into corpus/queries/run/qrels files; returns paths."""
    paths = {
        "corpus": directory / "corpus.jsonl",
        "queries": directory / "queries.jsonl",
        "run": directory / "input.run",
        "qrels": directory / "judgments.qrels",
    }
    with paths["corpus"].open("w") as fh:
        for passage in bundle.corpus.values():
            fh.write(json.dumps({"id": passage.id, "text": passage.text}) + "\n")
    with paths["queries"].open("w") as fh:
        for query in bundle.queries.values():
            fh.write(json.dumps({"qid": query.qid, "text": query.text}) + "\n")
    with paths["run"].open("w") as fh:
        for qid in sorted(bundle.run):
            for rank, (pid, score) in enumerate(bundle.run[qid].entries, start=1):
                fh.write(f"{qid} Q0 {pid} {rank} {score} synth\n")
    with paths["qrels"].open("w") as fh:
        for qid in sorted(bundle.qrels):
            for pid, grade in sorted(bundle.qrels[qid].items()):
                fh.write(f"{qid} 0 {pid} {grade}\n")
    return paths


@pytest.fixture
def small_bundle():
    return build_bundle(n_queries=6, n_candidates=30, seed=11)


@pytest.fixture
def oracle_judgments(small_bundle):
    return small_bundle.oracle_judgments_by_query_text()
