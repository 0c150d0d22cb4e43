"""
Reward-layer plumbing for RL: controlled perturbations of gold completions, mock
policies built from them, DPO preference pairs and GRPO-style group advantages.

Perturbation applicability::

    op               connectivity  shortest_path
    flip_answer      yes           yes (claimed length shifted)
    hallucinate_edge yes           yes
    corrupt_weight   no            yes
    corrupt_total    no            yes
    drop_step        no            yes
    shuffle_steps    yes           yes
    break_format     yes           yes
    blank_response   yes           yes
"""

import logging
import random
from decimal import Decimal
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .errors import InputError
from .evaluation import PearsonResult, pearson
from .parser import (
    ConnectivityAnswer,
    ConnectivityStep,
    ShortestPathAnswer,
    ShortestPathStep,
    TaskKind,
    UnparsedStep,
    extract_sections,
    parse_answer,
    parse_steps,
)
from .rewards import RewardConfig, RewardMode, Score, score_response
from .taskgen import TaskInstance, render_completion, render_gold_response

logger = logging.getLogger(__name__)

Number = Union[Decimal, float, int]


class PerturbationOp(str, Enum):
    # declaration order is application order: content edits first, format damage last
    FLIP_ANSWER = "flip_answer"
    HALLUCINATE_EDGE = "hallucinate_edge"
    CORRUPT_WEIGHT = "corrupt_weight"
    CORRUPT_TOTAL = "corrupt_total"
    DROP_STEP = "drop_step"
    SHUFFLE_STEPS = "shuffle_steps"
    BREAK_FORMAT = "break_format"
    BLANK_RESPONSE = "blank_response"


_ANY_KIND = frozenset(TaskKind)
_SHORTEST_ONLY = frozenset({TaskKind.SHORTEST_PATH})

APPLICABILITY: dict[PerturbationOp, frozenset[TaskKind]] = {
    PerturbationOp.FLIP_ANSWER: _ANY_KIND,
    PerturbationOp.HALLUCINATE_EDGE: _ANY_KIND,
    PerturbationOp.CORRUPT_WEIGHT: _SHORTEST_ONLY,
    PerturbationOp.CORRUPT_TOTAL: _SHORTEST_ONLY,
    PerturbationOp.DROP_STEP: _SHORTEST_ONLY,
    PerturbationOp.SHUFFLE_STEPS: _ANY_KIND,
    PerturbationOp.BREAK_FORMAT: _ANY_KIND,
    PerturbationOp.BLANK_RESPONSE: _ANY_KIND,
}


def is_applicable(op: PerturbationOp, kind: TaskKind) -> bool:
    return kind in APPLICABILITY[op]


class MockPolicy(BaseModel):
    """Independent per-op corruption probabilities. All zeros emits the gold response."""

    name: str = ""
    probabilities: dict[PerturbationOp, float] = Field(default_factory=dict)
    seed: int = 0

    @field_validator("probabilities")
    @classmethod
    def _check_probabilities(cls, value: dict[PerturbationOp, float]) -> dict[PerturbationOp, float]:
        for op, p in value.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {op.value} must lie in [0, 1], got {p}")
        return value


class PolicySweep(BaseModel):
    policies: list[MockPolicy] = Field(min_length=1)
    samples_per_instance: int = Field(default=4, ge=1)


class PairingStrategy(str, Enum):
    EXTREMES = "extremes"
    ALL_PAIRS = "all_pairs"


class PreferencePair(BaseModel):
    prompt_id: str
    chosen: str
    rejected: str
    reward_gap: Score

    @field_validator("reward_gap")
    @classmethod
    def _check_gap(cls, value: Decimal) -> Decimal:
        if value <= 0:
            raise ValueError("reward_gap must be positive")
        return value


class GroupAdvantages(BaseModel):
    rewards: list[float]
    advantages: list[float]


class RolloutGroup(BaseModel):
    prompt_id: str
    completions: list[str]
    rewards: list[Score]
    advantages: list[float]


# ---------------------
# Perturbations
# ---------------------

def _parsed_indices(steps: list) -> list[int]:
    return [i for i, step in enumerate(steps) if not isinstance(step, UnparsedStep)]


def perturb(inst: TaskInstance, gold: str, op: PerturbationOp, seed: int) -> str:
    """
    Apply one controlled corruption to a canonically formatted completion. Only the
    op's locus changes: one step line, the answer, the step order, or the tags.
    """
    if not is_applicable(op, inst.kind):
        raise InputError(f"{op.value} does not apply to {inst.kind.value} instances")
    if op is PerturbationOp.BLANK_RESPONSE:
        return ""
    if op is PerturbationOp.BREAK_FORMAT:
        return gold.replace("</answer>", "", 1)

    sections, _ = extract_sections(gold)
    if not (sections.response_found and sections.answer_found):
        raise InputError(f"{op.value} needs readable <response> and <answer> sections")
    rng = random.Random(f"{inst.id}|{op.value}|{seed}")
    lines = list(sections.step_lines)
    steps = parse_steps(inst.kind, lines)
    answer = sections.answer_raw
    parsed = _parsed_indices(steps)

    if op is PerturbationOp.FLIP_ANSWER:
        payload = parse_answer(inst.kind, answer)
        if isinstance(payload, ConnectivityAnswer):
            answer = ConnectivityAnswer(claim=not payload.claim).render()
        elif isinstance(payload, ShortestPathAnswer):
            answer = payload.model_copy(update={"length": payload.length + rng.randint(1, 3)}).render()
        else:
            raise InputError("flip_answer needs a parseable answer")

    elif op is PerturbationOp.HALLUCINATE_EDGE:
        ghost = inst.graph.n + rng.randrange(inst.graph.n)
        if parsed:
            i = rng.choice(parsed)
            lines[i] = steps[i].model_copy(update={"v": ghost}).render()
        elif inst.kind is TaskKind.CONNECTIVITY:
            # an empty trace has no endpoint to rewrite; assert a fabricated edge instead
            lines.append(ConnectivityStep(u=inst.source, v=ghost).render())
        else:
            raise InputError("hallucinate_edge needs at least one parsed step")

    elif op in (PerturbationOp.CORRUPT_WEIGHT, PerturbationOp.CORRUPT_TOTAL):
        if not parsed:
            raise InputError(f"{op.value} needs at least one parsed step")
        i = rng.choice(parsed)
        step: ShortestPathStep = steps[i]
        field = "weight" if op is PerturbationOp.CORRUPT_WEIGHT else "total"
        lines[i] = step.model_copy(update={field: getattr(step, field) + rng.randint(1, 5)}).render()

    elif op is PerturbationOp.DROP_STEP:
        if not lines:
            raise InputError("drop_step needs at least one step")
        # never the final step of a longer trace: the remaining prefix would still verify
        del lines[0 if len(lines) == 1 else rng.randrange(len(lines) - 1)]

    elif op is PerturbationOp.SHUFFLE_STEPS:
        if len(lines) >= 2:
            shuffled = list(lines)
            rng.shuffle(shuffled)
            if shuffled == lines:
                shuffled = lines[1:] + lines[:1]
            lines = shuffled

    return render_completion(sections.think, lines, answer)


def sample_policy(
    inst: TaskInstance,
    policy: MockPolicy,
    n: int,
    gold: Optional[str] = None,
) -> list[str]:
    """
    ``n`` completions, each the gold response with every op applied independently with
    the policy's probability. Ops that do not apply to the instance kind are skipped.
    """
    if n < 1:
        raise InputError("sample_policy needs n >= 1")
    gold = gold if gold is not None else render_gold_response(inst)

    completions = []
    for i in range(n):
        rng = random.Random(f"{policy.seed}|{inst.id}|{i}")
        text = gold
        for op in PerturbationOp:
            draw = rng.random()
            if draw < policy.probabilities.get(op, 0.0) and is_applicable(op, inst.kind):
                text = perturb(inst, text, op, seed=rng.getrandbits(32))
        completions.append(text)
    return completions


# ---------------------
# Preference pairs and advantages
# ---------------------

def _as_decimal(value: Number) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        return Decimal(repr(value))
    return Decimal(value)


def build_preference_pairs(
    prompt_id: str,
    scored: Sequence[tuple[str, Number]],
    margin: Number = 0,
    strategy: PairingStrategy = PairingStrategy.EXTREMES,
) -> list[PreferencePair]:
    """
    ``extremes`` emits the single (best, worst) pair, earliest index winning ties, when
    the reward gap exceeds ``margin``; ``all_pairs`` emits every ordered pair that does.
    """
    if not scored:
        raise InputError("build_preference_pairs needs at least one scored completion")
    margin = _as_decimal(margin)
    if margin < 0:
        raise InputError("margin must be non-negative")
    rewards = [_as_decimal(reward) for _, reward in scored]
    indices = range(len(scored))

    if strategy is PairingStrategy.EXTREMES:
        best = max(indices, key=lambda i: rewards[i])
        worst = min(indices, key=lambda i: rewards[i])
        candidates = [(best, worst)]
    else:
        candidates = [(i, j) for i in indices for j in indices if i != j]

    return [
        PreferencePair(
            prompt_id=prompt_id,
            chosen=scored[i][0],
            rejected=scored[j][0],
            reward_gap=rewards[i] - rewards[j],
        )
        for i, j in candidates
        if rewards[i] - rewards[j] > margin
    ]


def group_advantages(rewards: Sequence[Number]) -> GroupAdvantages:
    """(r - mean) / population std within the group; all zeros for a constant group."""
    if len(rewards) == 0:
        raise InputError("group_advantages needs at least one reward")
    values = np.asarray([float(r) for r in rewards], dtype=np.float64)
    if np.ptp(values) == 0:
        advantages = np.zeros_like(values)
    else:
        advantages = (values - values.mean()) / values.std()
    return GroupAdvantages(rewards=values.tolist(), advantages=advantages.tolist())


def rollout_group(
    inst: TaskInstance,
    policy: MockPolicy,
    group_size: int,
    mode: RewardMode = RewardMode.PROCESS,
    cfg: Optional[RewardConfig] = None,
) -> RolloutGroup:
    completions = sample_policy(inst, policy, group_size)
    rewards = [score_response(inst, text, mode, cfg).total for text in completions]
    return RolloutGroup(
        prompt_id=inst.id,
        completions=completions,
        rewards=rewards,
        advantages=group_advantages(rewards).advantages,
    )


def preference_pairs_for(
    inst: TaskInstance,
    policy: MockPolicy,
    n: int,
    margin: Number = 0,
    mode: RewardMode = RewardMode.PROCESS,
    cfg: Optional[RewardConfig] = None,
    strategy: PairingStrategy = PairingStrategy.EXTREMES,
) -> list[PreferencePair]:
    """Sample, score and pair completions for one prompt (a static DPO dataset row)."""
    completions = sample_policy(inst, policy, n)
    scored = [(text, score_response(inst, text, mode, cfg).total) for text in completions]
    pairs = build_preference_pairs(inst.id, scored, margin, strategy)
    logger.debug("%s: %d completions -> %d pairs", inst.id, n, len(pairs))
    return pairs


def linear_sweep(n_policies: int = 20, seed: int = 0) -> PolicySweep:
    """Policies whose corruption rate rises evenly from 0 to 1."""
    if n_policies < 2:
        raise InputError("a sweep needs at least two policies")
    policies = []
    for i in range(n_policies):
        rate = i / (n_policies - 1)
        policies.append(
            MockPolicy(
                name=f"rate-{rate:.3f}",
                probabilities={
                    PerturbationOp.FLIP_ANSWER: rate,
                    PerturbationOp.HALLUCINATE_EDGE: rate / 2,
                    PerturbationOp.CORRUPT_TOTAL: rate / 2,
                },
                seed=seed + i,
            )
        )
    return PolicySweep(policies=policies)


class PolicyResult(BaseModel):
    name: str
    accuracy: float
    mean_reward: float
    n: int


class SweepReport(BaseModel):
    mode: RewardMode
    results: list[PolicyResult]
    correlation: PearsonResult


def run_sweep(
    instances: Sequence[TaskInstance],
    sweep: PolicySweep,
    mode: RewardMode = RewardMode.PROCESS,
    cfg: Optional[RewardConfig] = None,
) -> SweepReport:
    """Per-policy accuracy and mean reward over ``instances``, and how well they correlate."""
    if not instances:
        raise InputError("run_sweep needs at least one instance")
    cfg = cfg or RewardConfig()
    golds = {inst.id: render_gold_response(inst) for inst in instances}

    results = []
    for index, policy in enumerate(sweep.policies):
        correct = 0
        total = Decimal(0)
        n = 0
        for inst in instances:
            for text in sample_policy(inst, policy, sweep.samples_per_instance, gold=golds[inst.id]):
                breakdown = score_response(inst, text, mode, cfg)
                correct += breakdown.answer_correct_flag
                total += breakdown.total
                n += 1
        result = PolicyResult(
            name=policy.name or f"policy-{index}",
            accuracy=correct / n,
            mean_reward=float(total / n),
            n=n,
        )
        logger.info("%s: accuracy %.3f, mean reward %.3f", result.name, result.accuracy, result.mean_reward)
        results.append(result)

    if len(results) >= 2:
        correlation = pearson([r.accuracy for r in results], [r.mean_reward for r in results])
    else:
        correlation = PearsonResult(r=None, n=len(results))
    return SweepReport(mode=mode, results=results, correlation=correlation)
