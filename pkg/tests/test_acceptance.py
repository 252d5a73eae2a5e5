"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they execute.
"""

import random
import string
import time
from contextlib import contextmanager

import numpy as np
import pytest

from rankwise.backends import (
    BackendConfig,
    ChatRequest,
    FlakyBackend,
    FunctionBackend,
    Gateway,
    IdentityBackend,
    NoisyBackend,
    OracleBackend,
)
from rankwise.harness import cmd_eval, cmd_filter, cmd_rerank, cmd_synthesize, kv_render
from rankwise.io import DatasetBundle, load_records, write_jsonl, write_records, write_run
from rankwise.metrics import (
    RewardParams,
    final_reward,
    multi_view_reward,
    ndcg_at_k,
    rbo,
    recall_at_k,
)
from rankwise.parsing import FormatStatus, parse_ranking, parse_response, ranking_source
from rankwise.synthesis import DEFAULT_CONSISTENCY_ALPHA
from rankwise.training import (
    GrpoParams,
    Rollout,
    RolloutGroup,
    group_advantages,
    grpo_loss,
    kl_token,
)
from rankwise.types import CandidateList, Passage, Query
from rankwise.windows import WindowParams, plan_windows, rerank_query

from conftest import build_bundle
from oracles import brute_ndcg_at_k, brute_rbo, brute_recall_at_k
from test_synthesis import ScriptedTeacher, make_record, pipeline_inputs


@contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number:02d} FAIL: {description}")
        raise
    print(f"ACCEPTANCE {number:02d} PASS: {description}")


def binary_list(relevant_ranks, length=20):
    ranked = [f"d{i}" for i in range(1, length + 1)]
    return ranked, {ranked[r - 1]: 1 for r in relevant_ranks}


def test_01_ndcg_worked_example():
    with criterion(1, "NDCG worked example: ranks (2,11) -> 0.3869, (9,10) -> 0.3618, <1ms"):
        ranked_a, judg_a = binary_list([2, 11])
        ranked_b, judg_b = binary_list([9, 10])
        ndcg_at_k(ranked_a, judg_a, 10)  # warm-up
        start = time.perf_counter()
        value_a = ndcg_at_k(ranked_a, judg_a, 10)
        value_b = ndcg_at_k(ranked_b, judg_b, 10)
        elapsed = time.perf_counter() - start
        assert value_a == pytest.approx(0.3869, abs=0.005)
        assert value_b == pytest.approx(0.3618, abs=0.005)
        assert value_b < value_a
        assert elapsed < 1e-3


def test_02_reward_gating_two_hundred_cases():
    with criterion(2, "format gate over 200 synthetic responses: r_m / 0 / -1, <1s"):
        rng = random.Random(31)
        m = 6
        ids = [f"d{i}" for i in range(m)]
        judgments = {ids[0]: 1, ids[3]: 1}
        gold = list(ids)
        params = RewardParams()
        start = time.perf_counter()
        for case in range(200):
            kind = ("good", "output_only", "bad")[case % 3]
            perm = rng.sample(range(1, m + 1), m)
            answer = " > ".join(f"[{k}]" for k in perm)
            if kind == "good":
                raw = f"<think>case {case}</think><answer>{answer}</answer>"
            elif kind == "output_only":
                broken = rng.choice(["[1] > [1]", "[1]", "hello", f"[{m + 5}] > [1]"])
                raw = f"<think>case {case}</think><answer>{broken}</answer>"
            else:
                raw = rng.choice(["no tags", "<think>only think</think>", f"<answer>{answer}</answer>"])
            parsed = parse_response(raw, m=m)
            expected_status = {
                "good": FormatStatus.BOTH_GOOD,
                "output_only": FormatStatus.OUTPUT_ONLY,
                "bad": FormatStatus.BAD,
            }[kind]
            assert parsed.format_status is expected_status
            rollout, _ = parse_ranking(ranking_source(parsed), ids)
            r_m = multi_view_reward(rollout, judgments, gold, params).r_m
            final = final_reward(parsed.format_status, r_m)
            if kind == "good":
                assert final == r_m
            elif kind == "output_only":
                assert final == 0.0
            else:
                assert final == -1.0
        assert time.perf_counter() - start < 1.0


def test_03_default_constants():
    with criterion(3, "defaults: phi=0.2 gamma=0.1 alpha=0.4, windows (100,20,10)->9, (10,5)->19"):
        params = RewardParams()
        assert params.phi == 0.2
        assert params.gamma == 0.1
        assert DEFAULT_CONSISTENCY_ALPHA == 0.4
        window = WindowParams()
        assert (window.n, window.w, window.s) == (100, 20, 10)
        assert len(plan_windows(window, 100)) == 9
        assert len(plan_windows(WindowParams(w=10, s=5), 100)) == 19


def test_04_filter_boundary(tmp_path):
    with criterion(4, "consistency 0.39/0.40/0.41 -> dropped/kept/kept at alpha=0.4"):
        records = [
            make_record("a", consistency=0.39),
            make_record("b", consistency=0.40),
            make_record("c", consistency=0.41),
        ]
        path = tmp_path / "records.jsonl"
        write_records(path, records)
        kept, report = cmd_filter(path, alpha=0.4)
        assert [r.qid for r in kept] == ["b", "c"]
        assert report.total_dropped == 1


def test_05_metric_oracle_equivalence():
    with criterion(5, "NDCG/Recall/RBO match brute force on 1000 random instances to 1e-9"):
        rng = random.Random(2024)
        for _ in range(1000):
            length = rng.randint(1, 20)
            ids = [f"d{i}" for i in range(length)]
            ranked = rng.sample(ids, length)
            gold = rng.sample(ids, length)
            judgments = {pid: rng.randint(0, 3) for pid in ids if rng.random() < 0.6}
            k = rng.randint(1, 25)
            p = rng.uniform(0.05, 0.95)
            assert abs(ndcg_at_k(ranked, judgments, k)
                       - brute_ndcg_at_k(ranked, judgments, k)) < 1e-9
            assert abs(recall_at_k(ranked, judgments, k)
                       - brute_recall_at_k(ranked, judgments, k)) < 1e-9
            assert abs(rbo(ranked, gold, p) - brute_rbo(ranked, gold, p)) < 1e-9


def test_06_end_to_end_oracle_run():
    with criterion(6, "50-query bundle: oracle mean NDCG@10 = 1.0, identity = baseline, <10s"):
        start = time.perf_counter()
        bundle = build_bundle(n_queries=50, n_candidates=60, seed=7)
        _, oracle_report = cmd_rerank(
            bundle, OracleBackend(bundle.oracle_judgments_by_query_text())
        )
        assert oracle_report.mean_ndcg == pytest.approx(1.0, abs=1e-12)

        _, identity_report = cmd_rerank(bundle, IdentityBackend())
        baseline = {
            qid: ndcg_at_k(bundle.run[qid].ids, bundle.qrels[qid], 10)
            for qid in bundle.run
        }
        assert identity_report.per_query_ndcg == baseline  # exact equality
        assert time.perf_counter() - start < 10.0


def test_07_permutation_safety_fuzz():
    with criterion(7, "10,000 adversarial backend outputs: output always a permutation"):
        rng = random.Random(99)
        vocab = (
            ["<think>", "</think>", "<answer>", "</answer>", "[", "]", ">", " > ",
             "[1]", "[2]", "[0]", "[99]", "[-3]", "[999999999999999]", "\n", " ", "None"]
            + list(string.ascii_letters[:12])
            + [str(n) for n in range(12)]
        )

        def garbage(_request):
            return "".join(rng.choice(vocab) for _ in range(rng.randint(0, 40)))

        backend = FunctionBackend(garbage)
        params = WindowParams(n=100, w=10, s=5)
        n, outputs = 30, 0
        corpus = {f"d{i}": Passage(f"d{i}", f"text {i}") for i in range(n)}
        entries = tuple((f"d{i}", float(n - i)) for i in range(n))
        windows_per_query = len(plan_windows(params, n))
        while outputs < 10_000:
            qid = f"fz{outputs}"
            query = Query(qid, "fuzz target query")
            candidates = CandidateList(qid, entries)
            ranking, trace = rerank_query(query, candidates, corpus, backend, params)
            assert ranking.is_permutation_of(candidates.ids)
            outputs += trace.calls
        assert outputs >= 10_000 and windows_per_query == 5


def test_08_grpo_math():
    with criterion(8, "advantages mean-0/std-1, loss(-a) exact, KL >= 0 x10k, finite diff 1e-4"):
        rng = np.random.default_rng(5)
        for _ in range(300):
            rewards = rng.uniform(-1, 1.3, size=rng.integers(2, 16))
            if rewards.std() <= 1e-8:
                continue
            adv = group_advantages(rewards)
            assert abs(adv.mean()) < 1e-9
            assert abs(adv.std() - 1.0) < 1e-9

        lps = [[-1.0, -2.0, -0.5], [-0.25, -3.0]]
        for a in (-2.0, -0.5, 0.0, 0.3, 1.7):
            group = RolloutGroup(
                [Rollout(0.0, seq, seq) for seq in lps]
            )
            for rollout in group.rollouts:
                rollout.advantage = a
            result = grpo_loss(group, GrpoParams(epsilon=0.2, beta=0.7))
            assert result.loss == pytest.approx(-a, abs=1e-12)
            assert result.kl == 0.0

        pairs = rng.uniform(-30, 0, size=(10_000, 2))
        kl_values = kl_token(pairs[:, 0], pairs[:, 1])
        assert np.all(kl_values >= 0.0)

        params = GrpoParams(epsilon=0.2, beta=0.1)
        ref = -rng.uniform(0.5, 2.0, size=(2, 3))
        policy = np.minimum(ref + np.log(rng.uniform(0.93, 1.07, size=(2, 3))), 0.0)
        rewards = [0.1, 0.9]

        def build(p):
            group = RolloutGroup(
                [Rollout(r, pl, rl) for r, pl, rl in zip(rewards, p, ref.tolist())]
            )
            group.compute_advantages()
            return group

        base_group = build(policy.tolist())
        advantages = [r.advantage for r in base_group.rollouts]
        h = 1e-6
        for i in range(2):
            for t in range(3):
                up, down = policy.copy(), policy.copy()
                up[i, t] += h
                down[i, t] -= h
                numeric = (
                    grpo_loss(build(up.tolist()), params).loss
                    - grpo_loss(build(down.tolist()), params).loss
                ) / (2 * h)
                ratio = np.exp(policy[i, t] - ref[i, t])
                analytic = (
                    -(ratio * advantages[i]) / 6
                    + params.beta * (1 - np.exp(ref[i, t] - policy[i, t])) / 6
                )
                assert numeric == pytest.approx(analytic, rel=1e-4, abs=1e-9)


def _records_to_bundle(records):
    """Treat each filtered record as a tiny retrieval task over its own list."""
    corpus, queries, run, qrels = {}, {}, {}, {}
    for record in records:
        corpus.update({p.id: p for p in record.passages})
        queries[record.qid] = Query(record.qid, record.query)
        entries = tuple(
            (p.id, float(len(record.passages) - i)) for i, p in enumerate(record.passages)
        )
        run[record.qid] = CandidateList(record.qid, entries)
        qrels[record.qid] = dict(record.pointwise)
    return DatasetBundle(corpus, queries, run, qrels)


def test_09_pipeline_determinism(tmp_path):
    with criterion(9, "synthesize -> filter -> rerank -> eval byte-identical at concurrency 8"):
        inputs, pos_texts, hard_texts = pipeline_inputs(n_records=10, n_candidates=14, seed=12)
        input_path = tmp_path / "inputs.jsonl"
        write_jsonl(input_path, inputs)

        artifacts = []
        for attempt in ("first", "second"):
            base = tmp_path / attempt
            base.mkdir()
            teacher = ScriptedTeacher(pos_texts, hard_texts)
            cmd_synthesize(input_path, teacher, out_path=base / "records.jsonl",
                           seed=1234, concurrency=8)
            cmd_filter(base / "records.jsonl", alpha=DEFAULT_CONSISTENCY_ALPHA,
                       out_path=base / "filtered.jsonl")
            bundle = _records_to_bundle(load_records(base / "filtered.jsonl"))
            cmd_rerank(bundle, NoisyBackend(seed=7, swap_rate=0.35),
                       params=WindowParams(n=20, w=10, s=5),
                       out_path=base / "reranked.run", concurrency=8)
            qrels_path = base / "eval.qrels"
            with qrels_path.open("w") as fh:
                for qid, grades in sorted(bundle.qrels.items()):
                    for pid, grade in sorted(grades.items()):
                        fh.write(f"{qid} 0 {pid} {grade}\n")
            eval_report = cmd_eval(base / "reranked.run", qrels_path, k=10)
            (base / "eval.kv").write_text(kv_render(eval_report.kv_lines()))
            artifacts.append(tuple(
                (base / name).read_bytes()
                for name in ("records.jsonl", "filtered.jsonl", "reranked.run", "eval.kv")
            ))
        assert artifacts[0] == artifacts[1]


def test_10_backend_retry_robustness():
    with criterion(10, "flaky mock failing 2 attempts succeeds under 3-attempt config"):
        gateway = Gateway(
            FlakyBackend(IdentityBackend(), fail_first=2),
            BackendConfig(retries=2, backoff_base_ms=1),
        )
        response = gateway.complete(ChatRequest.single_user("[1]: a\n\n[2]: b"))
        assert response.attempts == 3
        assert "<answer>" in response.text
