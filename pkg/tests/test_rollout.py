"""Tests for perturbations, mock policies, preference pairs and group advantages."""

import random
from decimal import Decimal

import numpy as np
import pytest
from pydantic import ValidationError

from grk.errors import InputError
from grk.parser import TaskKind
from grk.rewards import Verdict, score_response
from grk.rollout import (
    APPLICABILITY,
    MockPolicy,
    PairingStrategy,
    PerturbationOp,
    PolicySweep,
    build_preference_pairs,
    group_advantages,
    is_applicable,
    linear_sweep,
    perturb,
    preference_pairs_for,
    rollout_group,
    run_sweep,
    sample_policy,
)
from grk.taskgen import gold_steps, render_gold_response
from tests.conftest import sample_instances

NO_ANSWER = "<answer>\nno\n</answer>"


def verdicts(inst, text):
    return [v.verdict for v in score_response(inst, text).step_verdicts]


class TestApplicability:
    """Test which perturbations apply to which task kind."""

    def test_table(self):
        assert set(APPLICABILITY) == set(PerturbationOp)
        for op in (PerturbationOp.CORRUPT_WEIGHT, PerturbationOp.CORRUPT_TOTAL, PerturbationOp.DROP_STEP):
            assert not is_applicable(op, TaskKind.CONNECTIVITY)
            assert is_applicable(op, TaskKind.SHORTEST_PATH)
        assert is_applicable(PerturbationOp.FLIP_ANSWER, TaskKind.CONNECTIVITY)

    def test_inapplicable_op_rejected(self, conn_yes):
        with pytest.raises(InputError, match="does not apply"):
            perturb(conn_yes, render_gold_response(conn_yes), PerturbationOp.CORRUPT_WEIGHT, seed=0)


class TestPerturb:
    """Test perturbations of gold completions."""

    def test_flip_connectivity(self, conn_yes):
        text = perturb(conn_yes, render_gold_response(conn_yes), PerturbationOp.FLIP_ANSWER, seed=0)

        assert NO_ANSWER in text
        assert not score_response(conn_yes, text).answer_correct_flag

    def test_flip_shortest_path_shifts_length(self, sp_triangle):
        text = perturb(sp_triangle, render_gold_response(sp_triangle), PerturbationOp.FLIP_ANSWER, seed=0)
        claimed = int(text.rsplit("length=", 1)[1].split("\n")[0])

        assert 4 <= claimed <= 6
        assert verdicts(sp_triangle, text) == [Verdict.CORRECT, Verdict.CORRECT]

    @pytest.mark.parametrize("seed", range(5))
    def test_hallucinate_marks_exactly_one_step(self, sp_triangle, conn_yes, seed):
        for inst in (sp_triangle, conn_yes):
            text = perturb(inst, render_gold_response(inst), PerturbationOp.HALLUCINATE_EDGE, seed=seed)
            assert verdicts(inst, text).count(Verdict.HALLUCINATED) == 1

    def test_hallucinate_empty_trace(self, conn_isolated):
        text = perturb(conn_isolated, render_gold_response(conn_isolated), PerturbationOp.HALLUCINATE_EDGE, seed=0)

        assert verdicts(conn_isolated, text) == [Verdict.HALLUCINATED]

    def test_corrupt_weight(self, sp_triangle):
        text = perturb(sp_triangle, render_gold_response(sp_triangle), PerturbationOp.CORRUPT_WEIGHT, seed=1)

        assert Verdict.HALLUCINATED in verdicts(sp_triangle, text)

    def test_corrupt_total(self, sp_triangle):
        found = verdicts(
            sp_triangle, perturb(sp_triangle, render_gold_response(sp_triangle), PerturbationOp.CORRUPT_TOTAL, seed=2)
        )

        assert Verdict.INCORRECT in found
        assert Verdict.HALLUCINATED not in found

    def test_drop_step(self, sp_triangle):
        text = perturb(sp_triangle, render_gold_response(sp_triangle), PerturbationOp.DROP_STEP, seed=0)

        assert verdicts(sp_triangle, text) == [Verdict.INCORRECT]

    def test_shuffle_changes_order(self, conn_yes):
        text = perturb(conn_yes, render_gold_response(conn_yes), PerturbationOp.SHUFFLE_STEPS, seed=0)

        assert "<response>\n1 -> 2\n0 -> 1\n</response>" in text

    def test_break_format(self, conn_yes):
        text = perturb(conn_yes, render_gold_response(conn_yes), PerturbationOp.BREAK_FORMAT, seed=0)

        assert not score_response(conn_yes, text).format_ok

    def test_blank(self, sp_triangle):
        assert perturb(sp_triangle, render_gold_response(sp_triangle), PerturbationOp.BLANK_RESPONSE, seed=0) == ""

    def test_deterministic(self, sp_triangle):
        gold = render_gold_response(sp_triangle)

        assert perturb(sp_triangle, gold, PerturbationOp.CORRUPT_TOTAL, 9) == perturb(
            sp_triangle, gold, PerturbationOp.CORRUPT_TOTAL, 9
        )

    @pytest.mark.slow
    def test_gold_outscores_every_perturbation(self, full_size_instances):
        """Each applicable op lowers the process reward; reordering a connectivity trace may tie."""
        for inst in full_size_instances:
            gold = render_gold_response(inst)
            best = score_response(inst, gold).total
            for op in PerturbationOp:
                if not is_applicable(op, inst.kind):
                    continue
                for seed in range(2):
                    total = score_response(inst, perturb(inst, gold, op, seed)).total
                    may_tie = op is PerturbationOp.SHUFFLE_STEPS and (
                        inst.kind is TaskKind.CONNECTIVITY or len(gold_steps(inst)) < 2
                    )
                    if may_tie:
                        assert total <= best
                    else:
                        assert total < best, (inst.id, op)


class TestSamplePolicy:
    """Test mock policy sampling."""

    def test_zero_policy_emits_gold(self, sp_triangle):
        assert sample_policy(sp_triangle, MockPolicy(), 3) == [render_gold_response(sp_triangle)] * 3

    def test_certain_flip(self, conn_yes):
        policy = MockPolicy(probabilities={PerturbationOp.FLIP_ANSWER: 1.0})

        assert all(NO_ANSWER in text for text in sample_policy(conn_yes, policy, 5))

    def test_inapplicable_ops_skipped(self, conn_yes):
        policy = MockPolicy(probabilities={PerturbationOp.CORRUPT_WEIGHT: 1.0})

        assert sample_policy(conn_yes, policy, 2) == [render_gold_response(conn_yes)] * 2

    def test_rate_is_respected(self, conn_yes):
        policy = MockPolicy(probabilities={PerturbationOp.FLIP_ANSWER: 0.5}, seed=3)
        flipped = sum(NO_ANSWER in text for text in sample_policy(conn_yes, policy, 10_000))

        # three standard deviations of Binomial(10000, 0.5)
        assert abs(flipped - 5000) <= 150

    def test_seeded(self, sp_triangle):
        policy = MockPolicy(probabilities={op: 0.3 for op in PerturbationOp}, seed=5)

        assert sample_policy(sp_triangle, policy, 20) == sample_policy(sp_triangle, policy, 20)

    def test_needs_positive_n(self, conn_yes):
        with pytest.raises(InputError):
            sample_policy(conn_yes, MockPolicy(), 0)

    def test_probability_range_validated(self):
        with pytest.raises(ValidationError, match=r"\[0, 1\]"):
            MockPolicy(probabilities={PerturbationOp.FLIP_ANSWER: 1.5})

    def test_sweep_needs_a_policy(self):
        with pytest.raises(ValidationError):
            PolicySweep(policies=[])


class TestPreferencePairs:
    """Test preference pair construction."""

    def test_extremes(self):
        pairs = build_preference_pairs("p", [("good", 1.35), ("bad", -0.7)])

        assert len(pairs) == 1
        assert pairs[0].chosen == "good"
        assert pairs[0].rejected == "bad"
        assert pairs[0].reward_gap == Decimal("2.05")

    def test_equal_rewards_yield_nothing(self):
        assert build_preference_pairs("p", [("a", 1.2), ("b", 1.2), ("c", 1.2)]) == []

    def test_margin(self):
        assert build_preference_pairs("p", [("a", 1.2), ("b", 1.35)], margin=0.5) == []
        assert len(build_preference_pairs("p", [("a", 1.2), ("b", 1.35)], margin=0.1)) == 1

    def test_earliest_index_wins_ties(self):
        pairs = build_preference_pairs("p", [("first", 1), ("second", 1), ("low", 0)])

        assert pairs[0].chosen == "first"

    def test_all_pairs(self):
        pairs = build_preference_pairs("p", [("a", 1), ("b", 2), ("c", 3)], strategy=PairingStrategy.ALL_PAIRS)

        assert {(p.chosen, p.rejected) for p in pairs} == {("b", "a"), ("c", "a"), ("c", "b")}
        assert all(p.reward_gap > 0 for p in pairs)

    def test_bad_input(self):
        with pytest.raises(InputError):
            build_preference_pairs("p", [])
        with pytest.raises(InputError):
            build_preference_pairs("p", [("a", 1)], margin=-1)

    def test_gold_only_policy_pairs_nothing(self, conn_yes):
        assert preference_pairs_for(conn_yes, MockPolicy(), 4) == []

    def test_noisy_policy_pairs_gold_over_flip(self, conn_yes):
        policy = MockPolicy(probabilities={PerturbationOp.FLIP_ANSWER: 0.5}, seed=1)
        pairs = preference_pairs_for(conn_yes, policy, 16)

        assert len(pairs) == 1
        assert pairs[0].chosen == render_gold_response(conn_yes)
        assert NO_ANSWER in pairs[0].rejected


class TestGroupAdvantages:
    """Test group-normalized advantages."""

    def test_two_values(self):
        assert group_advantages([1, 0]).advantages == pytest.approx([1.0, -1.0])

    def test_constant_group(self):
        assert group_advantages([1, 1, 1]).advantages == [0.0, 0.0, 0.0]

    def test_three_values(self):
        assert group_advantages([2, 1, 0]).advantages == pytest.approx([1.2247449, 0.0, -1.2247449])

    def test_decimal_rewards(self):
        assert group_advantages([Decimal("1.35"), Decimal("-0.7")]).advantages == pytest.approx([1.0, -1.0])

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            group_advantages([])

    def test_standardized_and_invariant(self):
        rng = random.Random(0)
        for _ in range(1000):
            rewards = [rng.uniform(-3, 3) for _ in range(rng.randint(2, 16))]
            adv = np.asarray(group_advantages(rewards).advantages)
            assert adv.mean() == pytest.approx(0.0, abs=1e-9)
            assert adv.std() == pytest.approx(1.0)
            scale, shift = rng.uniform(0.1, 10), rng.uniform(-5, 5)
            moved = group_advantages([scale * r + shift for r in rewards]).advantages
            assert moved == pytest.approx(adv.tolist(), abs=1e-6)

    def test_rollout_group_of_gold(self, sp_triangle):
        group = rollout_group(sp_triangle, MockPolicy(), 4)

        assert group.rewards == [Decimal("1.35")] * 4
        assert group.advantages == [0.0] * 4


class TestSweep:
    """Test policy sweeps."""

    def test_linear_sweep(self):
        sweep = linear_sweep(5, seed=10)

        assert len(sweep.policies) == 5
        assert sweep.policies[0].probabilities[PerturbationOp.FLIP_ANSWER] == 0.0
        assert sweep.policies[-1].probabilities[PerturbationOp.FLIP_ANSWER] == 1.0
        assert sweep.policies[2].probabilities[PerturbationOp.HALLUCINATE_EDGE] == 0.25
        assert [p.seed for p in sweep.policies] == [10, 11, 12, 13, 14]

    def test_linear_sweep_needs_two(self):
        with pytest.raises(InputError):
            linear_sweep(1)

    def test_process_reward_tracks_accuracy(self):
        instances = sample_instances(TaskKind.CONNECTIVITY, 10, seed=1) + sample_instances(
            TaskKind.SHORTEST_PATH, 10, seed=2
        )
        sweep = linear_sweep(20).model_copy(update={"samples_per_instance": 8})
        report = run_sweep(instances, sweep)

        assert report.results[0].accuracy == 1.0
        assert report.results[-1].accuracy == 0.0
        assert report.correlation.defined
        assert report.correlation.r >= 0.9

    def test_needs_instances(self):
        with pytest.raises(InputError):
            run_sweep([], linear_sweep(2))
