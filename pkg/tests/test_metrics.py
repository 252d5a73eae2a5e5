import itertools
import math
import random

import pytest

from rankwise.metrics import (
    RewardParams,
    combine_reward,
    final_reward,
    gated_reward,
    multi_view_reward,
    ndcg_at_k,
    rbo,
    recall_at_k,
)
from rankwise.parsing import FormatStatus

from oracles import brute_ndcg_at_k, brute_rbo, brute_recall_at_k


def binary_list(relevant_ranks, length=20):
    """A ranked list of `length` ids with relevant docs at the given 1-based ranks."""
    ranked = [f"d{i}" for i in range(1, length + 1)]
    judgments = {ranked[r - 1]: 1 for r in relevant_ranks}
    return ranked, judgments


class TestNdcg:
    def test_two_relevant_ranks_2_and_11(self):
        ranked, judgments = binary_list([2, 11])
        assert ndcg_at_k(ranked, judgments, 10) == pytest.approx(0.3869, abs=5e-4)

    def test_two_relevant_ranks_9_and_10(self):
        ranked, judgments = binary_list([9, 10])
        value = ndcg_at_k(ranked, judgments, 10)
        expected = (1 / math.log2(10) + 1 / math.log2(11)) / (1 + 1 / math.log2(3))
        assert value == pytest.approx(expected, abs=1e-12)
        assert value == pytest.approx(0.3618, abs=5e-4)

    def test_ideal_ranking_scores_one(self):
        ranked = ["a", "b", "c", "d"]
        judgments = {"a": 3, "b": 2, "c": 1}
        assert ndcg_at_k(ranked, judgments, 10) == pytest.approx(1.0)

    def test_no_relevant_defined_as_zero(self):
        assert ndcg_at_k(["a", "b"], {}, 10) == 0.0
        assert ndcg_at_k(["a", "b"], {"a": 0}, 10) == 0.0

    def test_judged_but_unretrieved_counts_in_ideal(self):
        # one relevant retrieved at rank 1, another missing entirely
        value = ndcg_at_k(["a", "x"], {"a": 1, "gone": 1}, 10)
        ideal = 1 / math.log2(2) + 1 / math.log2(3)
        assert value == pytest.approx((1 / math.log2(2)) / ideal)

    def test_swap_toward_front_never_decreases(self):
        rng = random.Random(5)
        for _ in range(200):
            length = rng.randint(2, 12)
            ranked = [f"d{i}" for i in range(length)]
            judgments = {pid: rng.randint(0, 3) for pid in ranked}
            i, j = sorted(rng.sample(range(length), 2))
            if judgments[ranked[j]] <= judgments[ranked[i]]:
                continue  # only promote strictly higher-graded items
            swapped = list(ranked)
            swapped[i], swapped[j] = swapped[j], swapped[i]
            assert ndcg_at_k(swapped, judgments, 10) >= ndcg_at_k(ranked, judgments, 10) - 1e-12

    def test_equals_one_iff_ideal_small_instances(self):
        # exhaustive over all permutations of lists up to length 6
        rng = random.Random(9)
        for length in range(1, 7):
            ids = [f"d{i}" for i in range(length)]
            grades = {pid: rng.randint(0, 2) for pid in ids}
            if not any(grades.values()):
                grades[ids[0]] = 1
            for perm in itertools.permutations(ids):
                value = ndcg_at_k(perm, grades, length)
                sorted_desc = all(
                    grades[perm[i]] >= grades[perm[i + 1]] for i in range(length - 1)
                )
                assert (abs(value - 1.0) < 1e-12) == sorted_desc, (perm, grades)


class TestRecall:
    def test_both_in_top_ten(self):
        ranked, judgments = binary_list([9, 10])
        assert recall_at_k(ranked, judgments, 10) == 1.0

    def test_one_of_two_inside_cutoff(self):
        ranked, judgments = binary_list([2, 11])
        assert recall_at_k(ranked, judgments, 10) == 0.5

    def test_no_relevant(self):
        assert recall_at_k(["a"], {}, 10) == 0.0

    def test_denominator_is_total_relevant_uncapped(self):
        ranked = [f"d{i}" for i in range(30)]
        judgments = {f"d{i}": 1 for i in range(15)}  # 15 relevant, 10 fit in cutoff
        assert recall_at_k(ranked, judgments, 10) == pytest.approx(10 / 15)


class TestRbo:
    def test_identical_lists(self):
        ids = [f"d{i}" for i in range(20)]
        assert rbo(ids, ids, 0.9) == pytest.approx(1 - 0.9 ** 20, abs=1e-12)

    def test_swapped_pair(self):
        assert rbo(["1", "2"], ["2", "1"], 0.5) == pytest.approx(0.25)

    def test_reversed_pair_depth_structure(self):
        # depth 1 overlap 0, depth 2 overlap 2 (the full set)
        for p in (0.3, 0.5, 0.9):
            expected = (1 - p) * (0 + p * 2 / 2)
            assert rbo(["a", "b"], ["b", "a"], p) == pytest.approx(expected)

    def test_symmetry_and_bounds(self):
        rng = random.Random(3)
        for _ in range(200):
            length = rng.randint(1, 20)
            ids = [f"d{i}" for i in range(length)]
            first = rng.sample(ids, length)
            second = rng.sample(ids, length)
            p = rng.uniform(0.05, 0.95)
            forward = rbo(first, second, p)
            backward = rbo(second, first, p)
            assert forward == pytest.approx(backward, abs=1e-12)
            assert -1e-12 <= forward <= 1 - p ** length + 1e-12
            if first == second:
                assert forward == pytest.approx(1 - p ** length)
            else:
                assert forward < 1 - p ** length

    def test_non_permutation_rejected(self):
        with pytest.raises(ValueError):
            rbo(["a", "b"], ["a", "c"], 0.9)
        with pytest.raises(ValueError):
            rbo(["a"], ["a", "b"], 0.9)


class TestMultiViewReward:
    def test_perfect_rollout(self):
        ids = [f"d{i}" for i in range(20)]
        judgments = {ids[0]: 1, ids[1]: 1}
        breakdown = multi_view_reward(ids, judgments, ids, RewardParams())
        assert breakdown.r_m == pytest.approx(1 + 0.2 + 0.1 * (1 - 0.9 ** 20), abs=1e-9)

    def test_all_components_zero(self):
        rollout = ["a", "b", "c"]
        gold = ["c", "b", "a"]
        judgments = {}
        breakdown = multi_view_reward(rollout, judgments, gold, RewardParams(p=0.5))
        assert breakdown.ndcg == 0.0 and breakdown.recall == 0.0
        # zero rbo overlap is impossible for full permutations (depth L always
        # overlaps fully), so assert the composition instead
        assert breakdown.r_m == pytest.approx(0.1 * breakdown.rbo)

    def test_zero_weights_reduce_to_ndcg(self):
        rng = random.Random(1)
        ids = [f"d{i}" for i in range(15)]
        rollout = rng.sample(ids, len(ids))
        gold = rng.sample(ids, len(ids))
        judgments = {pid: rng.randint(0, 1) for pid in ids}
        params = RewardParams(phi=0.0, gamma=0.0)
        breakdown = multi_view_reward(rollout, judgments, gold, params)
        assert breakdown.r_m == pytest.approx(ndcg_at_k(rollout, judgments, 10), abs=1e-15)

    def test_strictly_increasing_in_each_component(self):
        params = RewardParams()
        base = combine_reward(0.5, 0.5, 0.5, params)
        assert combine_reward(0.6, 0.5, 0.5, params) > base
        assert combine_reward(0.5, 0.6, 0.5, params) > base
        assert combine_reward(0.5, 0.5, 0.6, params) > base


class TestFinalReward:
    def test_gating_cases(self):
        assert final_reward(FormatStatus.BOTH_GOOD, 0.9) == 0.9
        assert final_reward(FormatStatus.OUTPUT_ONLY, 0.9) == 0.0
        assert final_reward(FormatStatus.OUTPUT_ONLY, -5.0) == 0.0
        assert final_reward(FormatStatus.BAD, 0.9) == -1.0
        assert final_reward(FormatStatus.BAD, 123.0) == -1.0

    def test_range(self):
        rng = random.Random(2)
        params = RewardParams()
        upper = 1 + params.phi + params.gamma
        ids = [f"d{i}" for i in range(10)]
        for _ in range(200):
            rollout = rng.sample(ids, len(ids))
            gold = rng.sample(ids, len(ids))
            judgments = {pid: rng.randint(0, 1) for pid in ids}
            status = rng.choice(list(FormatStatus))
            breakdown = gated_reward(status, rollout, judgments, gold, params)
            assert breakdown.final == -1.0 or 0.0 <= breakdown.final <= upper
            assert (breakdown.final == breakdown.r_m) == (
                status is FormatStatus.BOTH_GOOD
            ) or breakdown.r_m in (0.0, -1.0)


class TestOracleEquivalence:
    def test_against_brute_force(self):
        rng = random.Random(42)
        for _ in range(300):
            length = rng.randint(1, 20)
            ids = [f"d{i}" for i in range(length)]
            ranked = rng.sample(ids, length)
            gold = rng.sample(ids, length)
            judgments = {pid: rng.randint(0, 3) for pid in ids if rng.random() < 0.7}
            k = rng.randint(1, 25)
            p = rng.uniform(0.05, 0.95)
            assert ndcg_at_k(ranked, judgments, k) == pytest.approx(
                brute_ndcg_at_k(ranked, judgments, k), abs=1e-9
            )
            assert recall_at_k(ranked, judgments, k) == pytest.approx(
                brute_recall_at_k(ranked, judgments, k), abs=1e-9
            )
            assert rbo(ranked, gold, p) == pytest.approx(
                brute_rbo(ranked, gold, p), abs=1e-9
            )


class TestRewardParams:
    def test_defaults(self):
        params = RewardParams()
        assert params.phi == 0.2
        assert params.gamma == 0.1
        assert params.p == 0.9
        assert params.k == 10

    @pytest.mark.parametrize(
        "kwargs", [{"phi": -0.1}, {"gamma": -1}, {"p": 0.0}, {"p": 1.0}, {"k": 0}]
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            RewardParams(**kwargs)
