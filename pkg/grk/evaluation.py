"""
Batch scoring of transcripts, accuracy reports, significance tests and the
single-step / multi-step probe analyses.

Reports are built from :class:`ReportTally` objects, whose merge is commutative and
associative, so a report does not depend on scoring order or sharding.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence, TypeVar, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from scipy.stats import norm

from .errors import InputError
from .parser import TaskKind, parse_step_sequence
from .rewards import ErrorRecord, RewardConfig, RewardMode, RewardRecord, ScoredRecord, score_record
from .taskgen import TaskInstance

logger = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.01

ModelT = TypeVar("ModelT", bound=BaseModel)


class Transcript(BaseModel):
    id: str
    completion: str
    meta: dict[str, Any] = Field(default_factory=dict)


# ---------------------
# Scoring
# ---------------------

def index_instances(dataset: Union[Mapping[str, TaskInstance], Iterable[TaskInstance]]) -> dict[str, TaskInstance]:
    if isinstance(dataset, Mapping):
        return dict(dataset)
    index: dict[str, TaskInstance] = {}
    for inst in dataset:
        if inst.id in index:
            raise InputError(f"duplicate instance id {inst.id!r}")
        index[inst.id] = inst
    return index


def score_transcripts(
    dataset: Union[Mapping[str, TaskInstance], Iterable[TaskInstance]],
    transcripts: Iterable[Transcript],
    mode: RewardMode = RewardMode.PROCESS,
    cfg: Optional[RewardConfig] = None,
    workers: int = 1,
) -> Iterator[ScoredRecord]:
    """
    One record per transcript, in input order. A transcript whose id is not in the
    dataset, or whose scoring raises, yields an :class:`ErrorRecord` and scoring
    carries on.
    """
    index = index_instances(dataset)
    cfg = cfg or RewardConfig()

    def score_one(transcript: Transcript) -> ScoredRecord:
        inst = index.get(transcript.id)
        if inst is None:
            logger.warning("transcript %r does not match any dataset instance", transcript.id)
            return ErrorRecord(id=transcript.id, error=f"unknown instance id {transcript.id!r}")
        try:
            return score_record(inst, transcript.completion, mode, cfg)
        except Exception as exc:
            logger.exception("scoring failed for transcript %r", transcript.id)
            return ErrorRecord(id=transcript.id, error=f"internal error: {exc}")

    if workers <= 1:
        yield from map(score_one, transcripts)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(score_one, transcripts)


# ---------------------
# Reports
# ---------------------

class KindTally(BaseModel):
    n: int = 0
    correct: int = 0
    format_failures: int = 0
    reward_sums: dict[RewardMode, Decimal] = Field(default_factory=dict)
    reward_counts: dict[RewardMode, int] = Field(default_factory=dict)

    def add(self, record: RewardRecord) -> None:
        self.n += 1
        self.correct += record.answer_correct
        self.format_failures += not record.format_ok
        self.reward_sums[record.mode] = self.reward_sums.get(record.mode, Decimal(0)) + record.total
        self.reward_counts[record.mode] = self.reward_counts.get(record.mode, 0) + 1

    def merge(self, other: "KindTally") -> "KindTally":
        modes = set(self.reward_sums) | set(other.reward_sums)
        return KindTally(
            n=self.n + other.n,
            correct=self.correct + other.correct,
            format_failures=self.format_failures + other.format_failures,
            reward_sums={m: self.reward_sums.get(m, Decimal(0)) + other.reward_sums.get(m, Decimal(0)) for m in modes},
            reward_counts={m: self.reward_counts.get(m, 0) + other.reward_counts.get(m, 0) for m in modes},
        )


class ReportTally(BaseModel):
    """Partial counts for a report; merge shards in any order."""

    kinds: dict[TaskKind, KindTally] = Field(default_factory=dict)
    n_errors: int = 0

    def add(self, record: ScoredRecord) -> None:
        if isinstance(record, ErrorRecord):
            self.n_errors += 1
            return
        self.kinds.setdefault(record.kind, KindTally()).add(record)

    def merge(self, other: "ReportTally") -> "ReportTally":
        kinds = {}
        for kind in set(self.kinds) | set(other.kinds):
            kinds[kind] = self.kinds.get(kind, KindTally()).merge(other.kinds.get(kind, KindTally()))
        return ReportTally(kinds=kinds, n_errors=self.n_errors + other.n_errors)

    def total(self) -> KindTally:
        combined = KindTally()
        for kind in TaskKind:
            if kind in self.kinds:
                combined = combined.merge(self.kinds[kind])
        return combined

    def report(self) -> "EvalReport":
        overall = self.total()
        if overall.n == 0:
            raise InputError("cannot report on zero scored records")
        return EvalReport(
            per_kind={kind: KindStats.from_tally(self.kinds[kind]) for kind in TaskKind if kind in self.kinds},
            overall=KindStats.from_tally(overall),
            n_errors=self.n_errors,
        )


class KindStats(BaseModel):
    n: int
    correct: int
    accuracy: float = Field(ge=0.0, le=1.0)
    format_failure_rate: float = Field(ge=0.0, le=1.0)
    mean_reward: dict[RewardMode, float]

    @classmethod
    def from_tally(cls, tally: KindTally) -> "KindStats":
        return cls(
            n=tally.n,
            correct=tally.correct,
            accuracy=tally.correct / tally.n,
            format_failure_rate=tally.format_failures / tally.n,
            mean_reward={
                mode: float(tally.reward_sums[mode] / tally.reward_counts[mode])
                for mode in RewardMode
                if tally.reward_counts.get(mode)
            },
        )


class EvalReport(BaseModel):
    """Per-kind and overall accuracy, mean total reward per mode and format failures."""

    per_kind: dict[TaskKind, KindStats]
    overall: KindStats
    n_errors: int = 0

    @property
    def overall_accuracy(self) -> float:
        return self.overall.accuracy

    @property
    def format_failure_rate(self) -> float:
        return self.overall.format_failure_rate

    @property
    def n_records(self) -> int:
        return self.overall.n + self.n_errors


def accuracy_report(records: Iterable[ScoredRecord]) -> EvalReport:
    tally = ReportTally()
    for record in records:
        tally.add(record)
    return tally.report()


def _fmt(stats: Optional[KindStats], attr: str, mode: Optional[RewardMode] = None) -> str:
    if stats is None:
        return "-"
    if mode is not None:
        value = stats.mean_reward.get(mode)
        return "-" if value is None else f"{value:.3f}"
    value = getattr(stats, attr)
    return str(value) if isinstance(value, int) else f"{value:.3f}"


def format_report_table(report: EvalReport) -> str:
    """Plain-text table with cells laid out as ``overall (connectivity, shortest path)``."""

    def cell(attr: str, mode: Optional[RewardMode] = None) -> str:
        parts = [_fmt(report.per_kind.get(kind), attr, mode) for kind in TaskKind]
        return f"{_fmt(report.overall, attr, mode)} ({', '.join(parts)})"

    rows = [("metric", "overall (connectivity, shortest path)")]
    rows.append(("accuracy", cell("accuracy")))
    for mode in RewardMode:
        if mode in report.overall.mean_reward:
            rows.append((f"mean reward ({mode.value})", cell("accuracy", mode)))
    rows.append(("format failure rate", cell("format_failure_rate")))
    rows.append(("records", cell("n")))
    rows.append(("errored records", str(report.n_errors)))

    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label.ljust(width)}  {value}" for label, value in rows) + "\n"


# ---------------------
# Statistics
# ---------------------

class SignificanceResult(BaseModel):
    z: float
    p_two_sided: float = Field(ge=0.0, le=1.0)
    alpha: float = SIGNIFICANCE_LEVEL
    significant: bool


def two_proportion_z_test(k1: int, n1: int, k2: int, n2: int, alpha: float = SIGNIFICANCE_LEVEL) -> SignificanceResult:
    """
    Pooled two-proportion z-test of k1/n1 against k2/n2 with a two-sided p-value. A
    pooled proportion of exactly 0 or 1 has no variance and gives z = 0, p = 1.
    """
    for k, n in ((k1, n1), (k2, n2)):
        if n < 1 or not 0 <= k <= n:
            raise InputError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")

    pooled = (k1 + k2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        return SignificanceResult(z=0.0, p_two_sided=1.0, alpha=alpha, significant=False)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    z = (k1 / n1 - k2 / n2) / se
    p = min(1.0, 2.0 * float(norm.sf(abs(z))))
    return SignificanceResult(z=z, p_two_sided=p, alpha=alpha, significant=p < alpha)


class PearsonResult(BaseModel):
    """``r`` is None when either series is constant or non-finite and the coefficient is undefined."""

    r: Optional[float] = Field(default=None, ge=-1.0, le=1.0)
    n: int

    @property
    def defined(self) -> bool:
        return self.r is not None


def pearson(xs: Sequence[float], ys: Sequence[float]) -> PearsonResult:
    if len(xs) != len(ys):
        raise InputError(f"pearson needs equal lengths, got {len(xs)} and {len(ys)}")
    if len(xs) < 2:
        raise InputError("pearson needs at least two points")
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if not (np.isfinite(x).all() and np.isfinite(y).all()) or np.ptp(x) == 0 or np.ptp(y) == 0:
        return PearsonResult(r=None, n=len(x))
    # Rescaled so the variances neither underflow nor overflow.
    x = (x - x.mean()) / np.ptp(x)
    y = (y - y.mean()) / np.ptp(y)
    r = float(np.corrcoef(x, y)[0, 1])
    if not math.isfinite(r):
        return PearsonResult(r=None, n=len(x))
    return PearsonResult(r=min(1.0, max(-1.0, r)), n=len(x))


class Change(str, Enum):
    INCREASE = "increase"
    DECREASE = "decrease"
    UNCHANGED = "unchanged"


class MetricComparison(BaseModel):
    scope: str
    baseline: float
    candidate: float
    relative_change: Optional[float]
    test: SignificanceResult
    change: Change


def _compare(scope: str, base: KindStats, cand: KindStats, alpha: float) -> MetricComparison:
    test = two_proportion_z_test(cand.correct, cand.n, base.correct, base.n, alpha)
    if not test.significant:
        change = Change.UNCHANGED
    else:
        change = Change.INCREASE if test.z > 0 else Change.DECREASE
    return MetricComparison(
        scope=scope,
        baseline=base.accuracy,
        candidate=cand.accuracy,
        relative_change=(cand.accuracy - base.accuracy) / base.accuracy if base.accuracy else None,
        test=test,
        change=change,
    )


def compare_reports(baseline: EvalReport, candidate: EvalReport, alpha: float = SIGNIFICANCE_LEVEL) -> list[MetricComparison]:
    """Overall and per-kind accuracy changes, marked only when significant at ``alpha``."""
    rows = [_compare("overall", baseline.overall, candidate.overall, alpha)]
    for kind in TaskKind:
        if kind in baseline.per_kind and kind in candidate.per_kind:
            rows.append(_compare(kind.value, baseline.per_kind[kind], candidate.per_kind[kind], alpha))
    return rows


# ---------------------
# Probes
# ---------------------

class Quadrant(str, Enum):
    """(single-step outcome, multi-step outcome); CORRECT_WRONG is the compositionality gap."""

    CORRECT_CORRECT = "single_correct_multi_correct"
    CORRECT_WRONG = "single_correct_multi_wrong"
    WRONG_CORRECT = "single_wrong_multi_correct"
    WRONG_WRONG = "single_wrong_multi_wrong"


_ROWS = {
    Quadrant.CORRECT_CORRECT: (Quadrant.CORRECT_CORRECT, Quadrant.CORRECT_WRONG),
    Quadrant.CORRECT_WRONG: (Quadrant.CORRECT_CORRECT, Quadrant.CORRECT_WRONG),
    Quadrant.WRONG_CORRECT: (Quadrant.WRONG_CORRECT, Quadrant.WRONG_WRONG),
    Quadrant.WRONG_WRONG: (Quadrant.WRONG_CORRECT, Quadrant.WRONG_WRONG),
}
_COLUMNS = {
    Quadrant.CORRECT_CORRECT: (Quadrant.CORRECT_CORRECT, Quadrant.WRONG_CORRECT),
    Quadrant.WRONG_CORRECT: (Quadrant.CORRECT_CORRECT, Quadrant.WRONG_CORRECT),
    Quadrant.CORRECT_WRONG: (Quadrant.CORRECT_WRONG, Quadrant.WRONG_WRONG),
    Quadrant.WRONG_WRONG: (Quadrant.CORRECT_WRONG, Quadrant.WRONG_WRONG),
}


def classify(single: Sequence[bool], multi: bool) -> Quadrant:
    if all(single):
        return Quadrant.CORRECT_CORRECT if multi else Quadrant.CORRECT_WRONG
    return Quadrant.WRONG_CORRECT if multi else Quadrant.WRONG_WRONG


class QuadrantProbe(BaseModel):
    qid: str = ""
    single: list[bool] = Field(min_length=1)
    multi: bool


class QuadrantCounts(BaseModel):
    """
    ``proportions`` divide by all probed questions; ``row_proportions`` by questions
    with the same single-step outcome; ``column_proportions`` by questions with the
    same multi-step outcome (None for an empty row or column).
    """

    n: int
    counts: dict[Quadrant, int]
    proportions: dict[Quadrant, float]
    row_proportions: dict[Quadrant, Optional[float]]
    column_proportions: dict[Quadrant, Optional[float]]
    single_step_accuracy: float
    multi_step_accuracy: float
    # accuracy of the i-th single-step sub-question over questions that have one
    per_step_accuracy: list[float]


def _as_quadrant_probe(item: Union[QuadrantProbe, tuple[Sequence[bool], bool]]) -> QuadrantProbe:
    if isinstance(item, QuadrantProbe):
        return item
    single, multi = item
    try:
        return QuadrantProbe(single=list(single), multi=multi)
    except ValidationError as exc:
        raise InputError(f"invalid quadrant probe: {exc}") from exc


def quadrant_analysis(paired: Iterable[Union[QuadrantProbe, tuple[Sequence[bool], bool]]]) -> QuadrantCounts:
    probes = [_as_quadrant_probe(item) for item in paired]
    if not probes:
        raise InputError("quadrant_analysis needs at least one probed question")

    counts = {q: 0 for q in Quadrant}
    step_hits: list[int] = []
    step_totals: list[int] = []
    for probe in probes:
        counts[classify(probe.single, probe.multi)] += 1
        for i, ok in enumerate(probe.single):
            if i == len(step_totals):
                step_hits.append(0)
                step_totals.append(0)
            step_hits[i] += ok
            step_totals[i] += 1

    def share(q: Quadrant, group: tuple[Quadrant, Quadrant]) -> Optional[float]:
        denominator = sum(counts[g] for g in group)
        return counts[q] / denominator if denominator else None

    n = len(probes)
    return QuadrantCounts(
        n=n,
        counts=counts,
        proportions={q: counts[q] / n for q in Quadrant},
        row_proportions={q: share(q, _ROWS[q]) for q in Quadrant},
        column_proportions={q: share(q, _COLUMNS[q]) for q in Quadrant},
        single_step_accuracy=sum(step_hits) / sum(step_totals),
        multi_step_accuracy=sum(p.multi for p in probes) / n,
        per_step_accuracy=[hits / total for hits, total in zip(step_hits, step_totals)],
    )


def compare_single_multi(paired: Iterable[Union[QuadrantProbe, tuple[Sequence[bool], bool]]]) -> SignificanceResult:
    """z-test of pooled single-step accuracy against multi-step accuracy."""
    probes = [_as_quadrant_probe(item) for item in paired]
    if not probes:
        raise InputError("compare_single_multi needs at least one probed question")
    single_hits = sum(sum(p.single) for p in probes)
    single_total = sum(len(p.single) for p in probes)
    return two_proportion_z_test(single_hits, single_total, sum(p.multi for p in probes), len(probes))


class PrecedenceConstraint(BaseModel):
    """Step ``before`` must come earlier in a plan than step ``after``."""

    before: int
    after: int

    @model_validator(mode="after")
    def _distinct(self) -> "PrecedenceConstraint":
        if self.before == self.after:
            raise ValueError(f"a step cannot precede itself ({self.before})")
        return self


def _as_constraint(item: Union[PrecedenceConstraint, Sequence[int]]) -> PrecedenceConstraint:
    if isinstance(item, PrecedenceConstraint):
        return item
    before, after = item
    return PrecedenceConstraint(before=before, after=after)


class ConstraintProbe(BaseModel):
    """A plan and its constraints. ``sequence`` may be given as ``step3->step1->step2``."""

    qid: str = ""
    sequence: list[int]
    constraints: list[PrecedenceConstraint] = Field(min_length=1)

    @field_validator("sequence", mode="before")
    @classmethod
    def _parse_plan(cls, value: Any) -> Any:
        if isinstance(value, str):
            parsed = parse_step_sequence(value)
            if parsed is None:
                raise ValueError(f"unreadable step sequence {value!r}")
            return parsed
        return value

    @field_validator("constraints", mode="before")
    @classmethod
    def _pairs_to_constraints(cls, value: Any) -> Any:
        if isinstance(value, list):
            return [
                {"before": item[0], "after": item[1]} if isinstance(item, (list, tuple)) else item for item in value
            ]
        return value


def _count_satisfied(sequence: Sequence[int], constraints: Sequence[PrecedenceConstraint]) -> int:
    if len(set(sequence)) != len(sequence):
        raise InputError(f"step sequence {list(sequence)} repeats a step")
    position = {step: i for i, step in enumerate(sequence)}
    return sum(
        1
        for c in constraints
        if c.before in position and c.after in position and position[c.before] < position[c.after]
    )


def constraint_satisfaction(
    sequence: Sequence[int],
    constraints: Sequence[Union[PrecedenceConstraint, Sequence[int]]],
) -> float:
    """Fraction of constraints the plan satisfies; a constraint on a missing step fails."""
    if not constraints:
        raise InputError("constraint_satisfaction needs at least one constraint")
    parsed = [_as_constraint(c) for c in constraints]
    return _count_satisfied(sequence, parsed) / len(parsed)


class ConstraintSummary(BaseModel):
    n_plans: int
    satisfied: int
    total: int
    pooled_fraction: float
    mean_fraction: float
    per_plan: list[float]


def aggregate_constraint_satisfaction(probes: Iterable[ConstraintProbe]) -> ConstraintSummary:
    """Satisfied constraints over all constraints across plans, plus the per-plan mean."""
    satisfied = total = 0
    per_plan = []
    for probe in probes:
        hit = _count_satisfied(probe.sequence, probe.constraints)
        satisfied += hit
        total += len(probe.constraints)
        per_plan.append(hit / len(probe.constraints))
    if not per_plan:
        raise InputError("no constraint probes given")
    return ConstraintSummary(
        n_plans=len(per_plan),
        satisfied=satisfied,
        total=total,
        pooled_fraction=satisfied / total,
        mean_fraction=sum(per_plan) / len(per_plan),
        per_plan=per_plan,
    )


# ---------------------
# JSONL input
# ---------------------

def parse_models(lines: Iterable[str], model: type[ModelT], source: str = "<stdin>") -> list[ModelT]:
    """Validate every nonblank JSON line; errors name the offending line."""
    items = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            items.append(model.model_validate_json(line))
        except ValidationError as exc:
            raise InputError(f"{source}:{lineno}: invalid {model.__name__}: {exc}") from exc
    return items


def read_models(path: Union[str, Path], model: type[ModelT]) -> list[ModelT]:
    with open(path, encoding="utf-8") as fp:
        return parse_models(fp, model, source=str(path))


def read_transcripts(path: Union[str, Path]) -> list[Transcript]:
    return read_models(path, Transcript)


def write_records(path: Union[str, Path], records: Iterable[BaseModel]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for record in records:
            fp.write(record.model_dump_json() + "\n")
            count += 1
    return count


def write_report(path: Union[str, Path], report: BaseModel) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(report.model_dump(mode="json"), fp, indent=2, sort_keys=True)
        fp.write("\n")
