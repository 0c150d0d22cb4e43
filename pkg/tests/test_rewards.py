"""Tests for step verification, answer checking and reward totals."""

import json
from decimal import Decimal

import pytest
from pydantic import ValidationError

from grk.parser import (
    ConnectivityAnswer,
    ConnectivityStep,
    ShortestPathAnswer,
    ShortestPathStep,
    TaskKind,
    UnparseableAnswer,
    UnparsedStep,
)
from grk.rewards import (
    RewardConfig,
    RewardMode,
    RewardRecord,
    Verdict,
    check_answer,
    score_record,
    score_response,
    verify_connectivity_step,
    verify_shortest_path_step,
)
from grk.taskgen import gold_answer, gold_steps, render_completion, render_gold_response

D = Decimal


def completion(steps, answer, think=""):
    return render_completion(think, steps, answer)


class TestRewardConfig:
    """Test reward constant validation."""

    def test_defaults(self):
        cfg = RewardConfig()

        assert cfg.overall_format == D("0.2")
        assert cfg.process_format == D("0.1")
        assert cfg.step_correct == D("0.05")
        assert cfg.step_incorrect == D("0")
        assert cfg.answer_correct == D("1.0")
        assert cfg.answer_incorrect == D("0")
        assert cfg.hallucination == D("-2.0")
        assert cfg.format_penalty == D("0")

    def test_floats_keep_their_written_value(self):
        cfg = RewardConfig.model_validate_json('{"step_correct": 0.07}')

        assert cfg.step_correct == D("0.07")

    def test_ordering_enforced(self):
        with pytest.raises(ValidationError, match="hallucination"):
            RewardConfig(hallucination=0.5)
        with pytest.raises(ValidationError, match="answer_incorrect"):
            RewardConfig(answer_incorrect=2)

    def test_unknown_constant_rejected(self):
        with pytest.raises(ValidationError):
            RewardConfig(bonus=1)


class TestConnectivityStep:
    """Test connectivity step verdicts."""

    def test_existing_edge(self, path_graph):
        verdict = verify_connectivity_step(path_graph, ConnectivityStep(u=0, v=1))

        assert verdict.verdict is Verdict.CORRECT
        assert verdict.awarded == D("0.05")

    def test_reversed_edge(self, path_graph):
        assert verify_connectivity_step(path_graph, ConnectivityStep(u=1, v=0)).verdict is Verdict.CORRECT

    def test_missing_node(self, path_graph):
        verdict = verify_connectivity_step(path_graph, ConnectivityStep(u=0, v=9))

        assert verdict.verdict is Verdict.HALLUCINATED
        assert verdict.awarded == D("-2")
        assert "node 9" in verdict.reason

    def test_missing_edge(self, path_graph):
        assert verify_connectivity_step(path_graph, ConnectivityStep(u=0, v=2)).verdict is Verdict.HALLUCINATED

    def test_unparsed(self, path_graph):
        verdict = verify_connectivity_step(path_graph, UnparsedStep(raw="hmm"))

        assert verdict.verdict is Verdict.INCORRECT
        assert verdict.awarded == D("0")


class TestShortestPathStep:
    """Test shortest-path step verdicts."""

    def test_first_step(self, triangle):
        step = ShortestPathStep(u=0, v=1, weight=1, total=1)

        assert verify_shortest_path_step(triangle, step).verdict is Verdict.CORRECT

    def test_wrong_weight(self, triangle):
        step = ShortestPathStep(u=1, v=2, weight=7, total=8)

        assert verify_shortest_path_step(triangle, step, prev_total=1, prev_head=1).verdict is Verdict.HALLUCINATED

    def test_bad_running_total(self, triangle):
        step = ShortestPathStep(u=1, v=2, weight=2, total=9)

        assert verify_shortest_path_step(triangle, step, prev_total=1, prev_head=1).verdict is Verdict.INCORRECT

    def test_discontiguous(self, triangle):
        step = ShortestPathStep(u=0, v=2, weight=5, total=6)
        verdict = verify_shortest_path_step(triangle, step, prev_total=1, prev_head=1)

        assert verdict.verdict is Verdict.INCORRECT
        assert "previous step ended" in verdict.reason

    def test_first_step_total_must_equal_weight(self, triangle):
        step = ShortestPathStep(u=0, v=1, weight=1, total=4)

        assert verify_shortest_path_step(triangle, step).verdict is Verdict.INCORRECT

    def test_unparsed(self, triangle):
        assert verify_shortest_path_step(triangle, UnparsedStep(raw="0 -> 1")).verdict is Verdict.INCORRECT


class TestCheckAnswer:
    """Test final answer checking."""

    def test_connectivity_correct(self, conn_yes):
        assert check_answer(conn_yes, ConnectivityAnswer(claim=True)) == (D("1.0"), D(0), True)

    def test_connectivity_wrong_or_unparseable(self, conn_yes):
        assert check_answer(conn_yes, ConnectivityAnswer(claim=False)) == (D(0), D(0), False)
        assert check_answer(conn_yes, UnparseableAnswer(raw="maybe")) == (D(0), D(0), False)

    def test_shortest_path_correct(self, sp_triangle):
        assert check_answer(sp_triangle, ShortestPathAnswer(path=[0, 1, 2], length=3)) == (D("1.0"), D(0), True)

    def test_shortest_path_hallucinated_path(self, sp_triangle):
        assert check_answer(sp_triangle, ShortestPathAnswer(path=[0, 3], length=1)) == (D(0), D("-2"), False)

    def test_shortest_path_wrong_length(self, sp_triangle):
        assert check_answer(sp_triangle, ShortestPathAnswer(path=[0, 2], length=5)) == (D(0), D(0), False)

    def test_shortest_path_claimed_length_must_match_path(self, sp_triangle):
        assert check_answer(sp_triangle, ShortestPathAnswer(path=[0, 1, 2], length=4)).correct is False

    def test_shortest_path_wrong_endpoints(self, sp_triangle):
        assert check_answer(sp_triangle, ShortestPathAnswer(path=[1, 2], length=3)).correct is False

    def test_shortest_path_ill_formed_pays_format_penalty(self, sp_triangle):
        cfg = RewardConfig(format_penalty=-0.5, answer_incorrect=-0.25)

        assert check_answer(sp_triangle, UnparseableAnswer(raw=""), cfg) == (D("-0.75"), D(0), False)


class TestScoreResponse:
    """Test total rewards in both modes."""

    @pytest.mark.parametrize("mode", list(RewardMode))
    def test_bare_answer_is_still_checked(self, conn_yes, mode):
        breakdown = score_response(conn_yes, "<answer>yes</answer>", mode)

        assert not breakdown.format_ok
        assert breakdown.answer_correct_flag
        assert breakdown.overall_format == D(0)
        assert breakdown.total == D("1.0")

    def test_gold_connectivity_process(self, conn_yes):
        breakdown = score_response(conn_yes, render_gold_response(conn_yes), RewardMode.PROCESS)

        assert breakdown.total == D("1.35")
        assert breakdown.overall_format == D("0.2")
        assert breakdown.process_format == D("0.1")
        assert breakdown.process_mean == D("0.05")
        assert breakdown.answer == D("1.0")
        assert breakdown.answer_correct_flag

    def test_gold_connectivity_solution(self, conn_yes):
        breakdown = score_response(conn_yes, render_gold_response(conn_yes), RewardMode.SOLUTION)

        assert breakdown.total == D("1.2")
        assert breakdown.step_verdicts == []

    def test_gold_shortest_path(self, sp_triangle):
        gold = render_gold_response(sp_triangle)

        assert score_response(sp_triangle, gold, RewardMode.PROCESS).total == D("1.35")
        assert score_response(sp_triangle, gold, RewardMode.SOLUTION).total == D("1.2")

    def test_single_hallucinated_step(self, conn_yes):
        breakdown = score_response(conn_yes, completion(["0 -> 9"], "yes"))

        assert breakdown.total == D("-0.7")
        assert [v.verdict for v in breakdown.step_verdicts] == [Verdict.HALLUCINATED]

    def test_zero_steps_gets_no_step_mean(self, conn_isolated):
        breakdown = score_response(conn_isolated, render_gold_response(conn_isolated))

        assert breakdown.process_mean == D(0)
        assert breakdown.process_format == D("0.1")
        assert breakdown.total == D("1.3")

    def test_unparsed_line_forfeits_process_format(self, conn_yes):
        breakdown = score_response(conn_yes, completion(["0 -> 1", "then 1 -> 2"], "yes"))

        assert breakdown.process_format == D(0)
        assert breakdown.process_mean == D("0.025")

    def test_broken_format_still_checks_answer(self, conn_yes):
        text = render_gold_response(conn_yes).replace("<think>", "")
        breakdown = score_response(conn_yes, text)

        assert not breakdown.format_ok
        assert breakdown.overall_format == D(0)
        assert breakdown.answer_correct_flag

    def test_empty_completion(self, sp_triangle):
        breakdown = score_response(sp_triangle, "")

        assert breakdown.total == D(0)
        assert not breakdown.answer_correct_flag

    def test_solution_mode_keeps_answer_path_penalty(self, sp_triangle):
        text = completion(["0 -> 1 : 1 ; total=1"], "path=0->3 ; length=1")
        breakdown = score_response(sp_triangle, text, RewardMode.SOLUTION)

        assert breakdown.answer_hallucination == D("-2")
        assert breakdown.total == D("-1.8")

    def test_chain_continues_from_claimed_step(self, sp_triangle):
        text = completion(["0 -> 1 : 1 ; total=2", "1 -> 2 : 2 ; total=4"], "path=0->1->2 ; length=3")
        verdicts = [v.verdict for v in score_response(sp_triangle, text).step_verdicts]

        assert verdicts == [Verdict.INCORRECT, Verdict.CORRECT]

    def test_custom_constants(self, conn_yes):
        cfg = RewardConfig(step_correct=0.5, answer_correct=3)

        assert score_response(conn_yes, render_gold_response(conn_yes), cfg=cfg).total == D("3.8")

    def test_wrong_answer_ranks_below_gold(self, conn_yes):
        gold = score_response(conn_yes, render_gold_response(conn_yes)).total
        wrong = score_response(conn_yes, completion(["0 -> 1", "1 -> 2"], "no")).total

        assert gold > wrong

    def test_hallucinated_step_ranks_below_clean_wrong_answer(self, conn_yes):
        clean = score_response(conn_yes, completion(["0 -> 1", "1 -> 2"], "no")).total
        hallucinated = score_response(conn_yes, completion(["0 -> 1", "1 -> 7"], "no")).total

        assert clean > hallucinated


class TestGeneratedInstances:
    """Properties over random instances."""

    @pytest.mark.slow
    def test_gold_is_maximal(self, full_size_instances):
        for inst in full_size_instances:
            gold = render_gold_response(inst)
            process = score_response(inst, gold, RewardMode.PROCESS)
            solution = score_response(inst, gold, RewardMode.SOLUTION)
            expected = D("1.35") if gold_steps(inst) else D("1.3")
            assert process.total == expected
            assert solution.total == D("1.2")
            assert process.answer_hallucination == D(0)
            assert all(v.verdict is Verdict.CORRECT for v in process.step_verdicts)

    def test_modes_agree_on_correctness(self, generated_instances):
        for inst in generated_instances[::5]:
            steps = [step.render() for step in gold_steps(inst)]
            for answer in (gold_answer(inst).render(), "no" if inst.ground_truth is True else "yes"):
                text = completion(steps, answer)
                flags = {score_response(inst, text, mode).answer_correct_flag for mode in RewardMode}
                assert len(flags) == 1

    def test_hallucinating_a_step_never_helps(self, generated_instances):
        for inst in generated_instances:
            steps = [step.render() for step in gold_steps(inst)]
            if not steps:
                continue
            gold = score_response(inst, render_gold_response(inst)).total
            ghost = inst.graph.n + 3
            if inst.kind is TaskKind.CONNECTIVITY:
                steps[0] = f"{inst.source} -> {ghost}"
            else:
                steps[0] = f"{inst.source} -> {ghost} : 1 ; total=1"
            worse = score_response(inst, completion(steps, gold_answer(inst).render()))
            assert worse.total < gold
            assert worse.answer == D("1.0")


class TestRewardRecord:
    """Test the reward record JSON layout."""

    def test_json_layout(self, conn_yes):
        record = score_record(conn_yes, render_gold_response(conn_yes))
        data = json.loads(record.model_dump_json())

        assert data["id"] == "connectivity-yes"
        assert data["mode"] == "process"
        assert data["total"] == 1.35
        assert data["components"] == {
            "overall_format": 0.2,
            "process_format": 0.1,
            "process_mean": 0.05,
            "answer": 1.0,
            "answer_hallucination": 0.0,
        }
        assert data["answer_correct"] is True
        assert data["step_verdicts"][0]["verdict"] == "correct"
        assert data["kind"] == "connectivity"

    def test_roundtrip(self, sp_triangle):
        record = score_record(sp_triangle, "", RewardMode.SOLUTION)

        js = record.model_dump_json()

        assert RewardRecord.model_validate_json(js).model_dump_json() == js
