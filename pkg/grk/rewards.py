"""
Solution-based and process-based rewards for connectivity and shortest-path completions.

Scores are exact ``Decimal`` quantities so that a breakdown always sums to its total.
"""

from decimal import Decimal
from enum import Enum
from typing import Annotated, Any, NamedTuple, Optional, Union

from pydantic import BaseModel, ConfigDict, PlainSerializer, field_validator, model_validator

from .graph import Graph, validate_path
from .parser import (
    AnswerPayload,
    ConnectivityAnswer,
    ShortestPathAnswer,
    ShortestPathStep,
    Step,
    TaskKind,
    UnparsedStep,
    parse_response,
)
from .taskgen import TaskInstance

Score = Annotated[Decimal, PlainSerializer(float, return_type=float, when_used="json")]

ZERO = Decimal(0)


class RewardMode(str, Enum):
    SOLUTION = "solution"
    PROCESS = "process"


class RewardConfig(BaseModel):
    """Reward constants. Defaults: overall format 0.2, process format 0.1, step +0.05,
    answer +1, hallucination -2, every penalty otherwise 0."""

    model_config = ConfigDict(extra="forbid")

    overall_format: Score = Decimal("0.2")
    process_format: Score = Decimal("0.1")
    step_correct: Score = Decimal("0.05")
    step_incorrect: Score = Decimal("0")
    answer_correct: Score = Decimal("1.0")
    answer_incorrect: Score = Decimal("0")
    hallucination: Score = Decimal("-2.0")
    format_penalty: Score = Decimal("0")

    @field_validator("*", mode="before")
    @classmethod
    def _float_as_written(cls, value: Any) -> Any:
        # 0.05 from a JSON file means Decimal("0.05"), not its binary expansion
        if isinstance(value, float):
            return Decimal(repr(value))
        return value

    @model_validator(mode="after")
    def _check_ordering(self) -> "RewardConfig":
        if not self.hallucination < self.step_incorrect <= self.step_correct:
            raise ValueError("reward constants must satisfy hallucination < step_incorrect <= step_correct")
        if not self.answer_incorrect < self.answer_correct:
            raise ValueError("reward constants must satisfy answer_incorrect < answer_correct")
        return self


class Verdict(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    HALLUCINATED = "hallucinated"


class StepVerdict(BaseModel):
    verdict: Verdict
    reason: str
    awarded: Score


class RewardBreakdown(BaseModel):
    overall_format: Score
    process_format: Score
    process_mean: Score
    answer: Score
    answer_hallucination: Score
    total: Score
    step_verdicts: list[StepVerdict]
    answer_correct_flag: bool
    format_ok: bool

    @model_validator(mode="after")
    def _check_identity(self) -> "RewardBreakdown":
        parts = (
            self.overall_format
            + self.process_format
            + self.process_mean
            + self.answer
            + self.answer_hallucination
        )
        if parts != self.total:
            raise ValueError(f"components sum to {parts}, total is {self.total}")
        return self


class AnswerCheck(NamedTuple):
    answer: Decimal
    hallucination: Decimal
    correct: bool


def _award(verdict: Verdict, cfg: RewardConfig) -> Decimal:
    return {
        Verdict.CORRECT: cfg.step_correct,
        Verdict.INCORRECT: cfg.step_incorrect,
        Verdict.HALLUCINATED: cfg.hallucination,
    }[verdict]


def _judge(verdict: Verdict, reason: str, cfg: RewardConfig) -> StepVerdict:
    return StepVerdict(verdict=verdict, reason=reason, awarded=_award(verdict, cfg))


def _missing_element(g: Graph, u: int, v: int) -> Optional[str]:
    for node in (u, v):
        if not g.has_node(node):
            return f"node {node} is not in the graph"
    if not g.has_edge(u, v):
        return f"edge {u}-{v} is not in the graph"
    return None


# ---------------------
# Step verification
# ---------------------

def verify_connectivity_step(g: Graph, step: Step, cfg: Optional[RewardConfig] = None) -> StepVerdict:
    cfg = cfg or RewardConfig()
    if isinstance(step, UnparsedStep):
        return _judge(Verdict.INCORRECT, f"unparsed step line {step.raw!r}", cfg)
    missing = _missing_element(g, step.u, step.v)
    if missing:
        return _judge(Verdict.HALLUCINATED, missing, cfg)
    return _judge(Verdict.CORRECT, f"edge {step.u}-{step.v} exists", cfg)


def verify_shortest_path_step(
    g: Graph,
    step: Step,
    prev_total: Optional[int] = None,
    prev_head: Optional[int] = None,
    cfg: Optional[RewardConfig] = None,
) -> StepVerdict:
    """
    A step is correct when its edge and weight are real, its running total extends
    ``prev_total`` (0 before the first step) by exactly that weight, and it starts where
    the previous step ended (``prev_head``).
    """
    cfg = cfg or RewardConfig()
    if not isinstance(step, ShortestPathStep):
        raw = step.raw if isinstance(step, UnparsedStep) else step.render()
        return _judge(Verdict.INCORRECT, f"unparsed step line {raw!r}", cfg)

    missing = _missing_element(g, step.u, step.v)
    if missing:
        return _judge(Verdict.HALLUCINATED, missing, cfg)
    true_weight = g.weight(step.u, step.v)
    if step.weight != true_weight:
        return _judge(
            Verdict.HALLUCINATED,
            f"claimed weight {step.weight} but edge {step.u}-{step.v} has weight {true_weight}",
            cfg,
        )
    if prev_head is not None and step.u != prev_head:
        return _judge(
            Verdict.INCORRECT, f"step starts at node {step.u} but the previous step ended at {prev_head}", cfg
        )
    expected = (prev_total or 0) + step.weight
    if step.total != expected:
        return _judge(Verdict.INCORRECT, f"running total {step.total}, expected {expected}", cfg)
    return _judge(Verdict.CORRECT, f"edge {step.u}-{step.v} weight {step.weight}, total {expected}", cfg)


def _verify_steps(inst: TaskInstance, steps: list[Step], cfg: RewardConfig) -> list[StepVerdict]:
    if inst.kind is TaskKind.CONNECTIVITY:
        return [verify_connectivity_step(inst.graph, step, cfg) for step in steps]

    verdicts = []
    prev_total: Optional[int] = None
    prev_head: Optional[int] = None
    for step in steps:
        verdicts.append(verify_shortest_path_step(inst.graph, step, prev_total, prev_head, cfg))
        # the trace continues from what the step claimed, right or wrong
        if isinstance(step, ShortestPathStep):
            prev_total, prev_head = step.total, step.v
    return verdicts


# ---------------------
# Answers and totals
# ---------------------

def check_answer(inst: TaskInstance, payload: AnswerPayload, cfg: Optional[RewardConfig] = None) -> AnswerCheck:
    cfg = cfg or RewardConfig()
    if inst.kind is TaskKind.CONNECTIVITY:
        if isinstance(payload, ConnectivityAnswer) and payload.claim == inst.ground_truth:
            return AnswerCheck(cfg.answer_correct, ZERO, True)
        return AnswerCheck(cfg.answer_incorrect, ZERO, False)

    if not isinstance(payload, ShortestPathAnswer):
        return AnswerCheck(cfg.format_penalty + cfg.answer_incorrect, ZERO, False)
    valid, total = validate_path(inst.graph, payload.path)
    if not valid:
        return AnswerCheck(ZERO, cfg.hallucination, False)
    correct = (
        payload.path[0] == inst.source
        and payload.path[-1] == inst.target
        and total == payload.length
        and payload.length == inst.ground_truth
    )
    return AnswerCheck(cfg.answer_correct if correct else cfg.answer_incorrect, ZERO, correct)


def score_response(
    inst: TaskInstance,
    completion: str,
    mode: RewardMode = RewardMode.PROCESS,
    cfg: Optional[RewardConfig] = None,
) -> RewardBreakdown:
    cfg = cfg or RewardConfig()
    parsed = parse_response(inst.kind, completion)
    sections = parsed.sections

    process_format = process_mean = ZERO
    verdicts: list[StepVerdict] = []
    if mode is RewardMode.PROCESS:
        verdicts = _verify_steps(inst, parsed.steps, cfg)
        if sections.response_found and not any(isinstance(s, UnparsedStep) for s in parsed.steps):
            process_format = cfg.process_format
        if verdicts:
            process_mean = sum((v.awarded for v in verdicts), ZERO) / len(verdicts)

    overall = cfg.overall_format if sections.format_ok else cfg.format_penalty
    check = check_answer(inst, parsed.answer, cfg)
    return RewardBreakdown(
        overall_format=overall,
        process_format=process_format,
        process_mean=process_mean,
        answer=check.answer,
        answer_hallucination=check.hallucination,
        total=overall + process_format + process_mean + check.answer + check.hallucination,
        step_verdicts=verdicts,
        answer_correct_flag=check.correct,
        format_ok=sections.format_ok,
    )


# ---------------------
# Records
# ---------------------

class RewardComponents(BaseModel):
    overall_format: Score
    process_format: Score
    process_mean: Score
    answer: Score
    answer_hallucination: Score


class VerdictRecord(BaseModel):
    verdict: Verdict
    reason: str


class RewardRecord(BaseModel):
    """One scored completion in the reward-record JSON layout."""

    id: str
    mode: RewardMode
    components: RewardComponents
    total: Score
    answer_correct: bool
    step_verdicts: list[VerdictRecord]
    kind: TaskKind
    format_ok: bool

    @classmethod
    def from_breakdown(cls, inst: TaskInstance, mode: RewardMode, breakdown: RewardBreakdown) -> "RewardRecord":
        return cls(
            id=inst.id,
            mode=mode,
            components=RewardComponents(
                overall_format=breakdown.overall_format,
                process_format=breakdown.process_format,
                process_mean=breakdown.process_mean,
                answer=breakdown.answer,
                answer_hallucination=breakdown.answer_hallucination,
            ),
            total=breakdown.total,
            answer_correct=breakdown.answer_correct_flag,
            step_verdicts=[VerdictRecord(verdict=v.verdict, reason=v.reason) for v in breakdown.step_verdicts],
            kind=inst.kind,
            format_ok=breakdown.format_ok,
        )


class ErrorRecord(BaseModel):
    id: Optional[str] = None
    error: str


ScoredRecord = Union[RewardRecord, ErrorRecord]


def score_record(
    inst: TaskInstance,
    completion: str,
    mode: RewardMode = RewardMode.PROCESS,
    cfg: Optional[RewardConfig] = None,
) -> RewardRecord:
    return RewardRecord.from_breakdown(inst, mode, score_response(inst, completion, mode, cfg))
