"""
``grk`` command line.

Exit codes: 0 success, 1 validation or input error, 2 partial scoring failure
(some transcripts could not be scored; the rest are still written).
"""

import json
import logging
import sys
from contextlib import contextmanager
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

import typer
from pydantic import BaseModel, ValidationError

from .config import RunConfig, ServiceBind, load_reward_config
from .errors import GrkError
from .evaluation import (
    ConstraintProbe,
    QuadrantProbe,
    Transcript,
    accuracy_report,
    aggregate_constraint_satisfaction,
    compare_single_multi,
    format_report_table,
    parse_models,
    quadrant_analysis,
    read_models,
    score_transcripts,
    write_records,
    write_report,
)
from .rewards import ErrorRecord, RewardMode
from .rollout import (
    MockPolicy,
    PairingStrategy,
    PerturbationOp,
    PolicySweep,
    linear_sweep,
    preference_pairs_for,
    run_sweep,
)
from .serde import ArtifactSerde
from .service import ScoringService, run_server, serve_stdio
from .taskgen import DatasetSpec, build_dataset, read_dataset, write_dataset

logger = logging.getLogger(__name__)

EXIT_INVALID = 1
EXIT_PARTIAL = 2

DEFAULT_PAIR_POLICY = MockPolicy(
    name="default-pairs",
    probabilities={
        PerturbationOp.FLIP_ANSWER: 0.3,
        PerturbationOp.HALLUCINATE_EDGE: 0.3,
        PerturbationOp.CORRUPT_TOTAL: 0.2,
        PerturbationOp.DROP_STEP: 0.2,
        PerturbationOp.BREAK_FORMAT: 0.1,
    },
)

app = typer.Typer(
    help="Synthetic graph tasks, rule-based rewards and reward-signal evaluation.",
    no_args_is_help=True,
    add_completion=False,
)


class ProbeKind(str, Enum):
    QUADRANT = "quadrant"
    CONSTRAINTS = "constraints"


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level.")) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@contextmanager
def _invalid_input_exits() -> Iterator[None]:
    try:
        yield
    except (GrkError, ValidationError, OSError) as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(EXIT_INVALID)


def _dump_json(path: Path, model: BaseModel) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_report(path, model)


@app.command()
def gen(
    spec: Optional[Path] = typer.Argument(None, help="DatasetSpec JSON; defaults to 500 per task per split."),
    out: Path = typer.Option(Path("data"), "--out", help="Output directory."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the spec's master seed."),
) -> None:
    """Generate train.jsonl, test.jsonl and manifest.json."""
    with _invalid_input_exits():
        run = RunConfig(spec=spec, out=out, seed=seed)
        dataset_spec = ArtifactSerde.load_file(run.spec, expected=DatasetSpec) if run.spec else DatasetSpec()
        if run.seed is not None:
            dataset_spec = DatasetSpec.model_validate({**dataset_spec.model_dump(), "seed": run.seed})
        paths = write_dataset(build_dataset(dataset_spec), run.out, dataset_spec)
    for split, path in paths.items():
        typer.echo(f"{split.value}: {path}")


@app.command()
def score(
    dataset: Path = typer.Argument(..., help="Dataset JSONL file or directory."),
    transcripts: str = typer.Argument(..., help="Transcript JSONL file, or - for stdin."),
    mode: Optional[list[RewardMode]] = typer.Option(None, "--mode", help="Reward mode; repeat for several."),
    reward_config: Optional[Path] = typer.Option(None, "--reward-config", help="Reward constants JSON."),
    out: Path = typer.Option(Path("."), "--out", help="Output directory."),
    workers: int = typer.Option(1, "--workers", help="Scoring threads."),
) -> None:
    """Score transcripts; writes rewards.jsonl, report.json and report.txt."""
    from_stdin = transcripts == "-"
    with _invalid_input_exits():
        run = RunConfig(
            dataset=[dataset],
            transcripts=None if from_stdin else Path(transcripts),
            transcripts_stdin=from_stdin,
            out=out,
            reward=load_reward_config(reward_config),
            modes=mode or [RewardMode.PROCESS],
            workers=workers,
        )
        run.require_transcripts()
        instances = read_dataset(dataset)
        if from_stdin:
            items = parse_models(sys.stdin, Transcript)
        else:
            items = read_models(run.transcripts, Transcript)
        if not items:
            raise GrkError("no transcripts to score")

    records = []
    for reward_mode in run.modes:
        records.extend(score_transcripts(instances, items, reward_mode, run.reward, run.workers))
    n_errors = sum(isinstance(record, ErrorRecord) for record in records)

    run.out.mkdir(parents=True, exist_ok=True)
    write_records(run.out / "rewards.jsonl", records)
    if n_errors < len(records):
        report = accuracy_report(records)
        _dump_json(run.out / "report.json", report)
        table = format_report_table(report)
        (run.out / "report.txt").write_text(table, encoding="utf-8")
        typer.echo(table, nl=False)

    if n_errors:
        typer.echo(f"{n_errors} of {len(records)} records failed to score", err=True)
        raise typer.Exit(EXIT_PARTIAL)


@app.command()
def probe(
    file: Path = typer.Argument(..., help="Probe JSONL."),
    kind: ProbeKind = typer.Option(ProbeKind.QUADRANT, "--kind", help="Probe layout."),
    out: Optional[Path] = typer.Option(None, "--out", help="Also write the result here."),
) -> None:
    """Quadrant analysis of single/multi-step probes, or precedence-constraint scoring of plans."""
    with _invalid_input_exits():
        if kind is ProbeKind.QUADRANT:
            probes = read_models(file, QuadrantProbe)
            result = {
                "quadrants": quadrant_analysis(probes).model_dump(mode="json"),
                "single_vs_multi": compare_single_multi(probes).model_dump(mode="json"),
            }
        else:
            summary = aggregate_constraint_satisfaction(read_models(file, ConstraintProbe))
            result = {"constraints": summary.model_dump(mode="json")}

    text = json.dumps(result, indent=2, sort_keys=True)
    if out is not None:
        out.write_text(text + "\n", encoding="utf-8")
    typer.echo(text)


@app.command()
def serve(
    addr: Optional[str] = typer.Option(None, "--addr", help="HOST:PORT for the HTTP endpoint."),
    stdio: bool = typer.Option(False, "--stdio", help="Serve JSON lines over stdin/stdout."),
    dataset: Optional[Path] = typer.Option(None, "--dataset", help="Dataset for dataset_id lookups."),
    reward_config: Optional[Path] = typer.Option(None, "--reward-config", help="Reward constants JSON."),
    workers: int = typer.Option(4, "--workers", help="Scoring threads (stdio mode)."),
) -> None:
    """Run the scoring service."""
    with _invalid_input_exits():
        run = RunConfig(
            dataset=[dataset] if dataset else [],
            reward=load_reward_config(reward_config),
            bind=ServiceBind(addr=addr, stdio=stdio, workers=workers),
        )
        service = ScoringService(read_dataset(dataset) if dataset else [], run.reward)

    if run.bind.stdio:
        serve_stdio(service, workers=run.bind.workers)
    else:
        run_server(service, *run.bind.host_port())


@app.command()
def pairs(
    dataset: Path = typer.Argument(..., help="Dataset JSONL file or directory."),
    policy_config: Optional[Path] = typer.Option(None, "--policy-config", help="MockPolicy JSON."),
    samples: int = typer.Option(4, "--samples", help="Completions sampled per prompt."),
    margin: float = typer.Option(0.0, "--margin", help="Minimum reward gap."),
    strategy: PairingStrategy = typer.Option(PairingStrategy.EXTREMES, "--strategy"),
    mode: RewardMode = typer.Option(RewardMode.PROCESS, "--mode"),
    reward_config: Optional[Path] = typer.Option(None, "--reward-config", help="Reward constants JSON."),
    out: Path = typer.Option(Path("pairs.jsonl"), "--out", help="Preference-pair JSONL."),
) -> None:
    """Build a static DPO preference-pair dataset from mock-policy samples."""
    with _invalid_input_exits():
        run = RunConfig(dataset=[dataset], reward=load_reward_config(reward_config), modes=[mode])
        policy = ArtifactSerde.load_file(policy_config, expected=MockPolicy) if policy_config else DEFAULT_PAIR_POLICY
        rows = []
        for inst in read_dataset(dataset):
            rows.extend(
                preference_pairs_for(inst, policy, samples, Decimal(repr(margin)), mode, run.reward, strategy)
            )

    out.parent.mkdir(parents=True, exist_ok=True)
    count = write_records(out, rows)
    typer.echo(f"{count} preference pairs written to {out}")


@app.command()
def sweep(
    dataset: Path = typer.Argument(..., help="Dataset JSONL file or directory."),
    sweep_config: Optional[Path] = typer.Option(None, "--sweep-config", help="PolicySweep JSON."),
    policies: int = typer.Option(20, "--policies", help="Size of the default linear sweep."),
    samples: int = typer.Option(4, "--samples", help="Completions per instance per policy."),
    limit: Optional[int] = typer.Option(None, "--limit", help="Use only the first N instances."),
    seed: int = typer.Option(0, "--seed"),
    mode: RewardMode = typer.Option(RewardMode.PROCESS, "--mode"),
    reward_config: Optional[Path] = typer.Option(None, "--reward-config", help="Reward constants JSON."),
    out: Path = typer.Option(Path("sweep.json"), "--out", help="SweepReport JSON."),
) -> None:
    """Correlate accuracy with mean reward across mock policies of rising corruption."""
    with _invalid_input_exits():
        run = RunConfig(dataset=[dataset], reward=load_reward_config(reward_config), modes=[mode], seed=seed)
        if sweep_config:
            plan = ArtifactSerde.load_file(sweep_config, expected=PolicySweep)
        else:
            plan = PolicySweep(policies=linear_sweep(policies, seed=seed).policies, samples_per_instance=samples)
        instances = read_dataset(dataset)[:limit]
        report = run_sweep(instances, plan, mode, run.reward)

    _dump_json(out, report)
    r = report.correlation.r
    typer.echo(f"pearson(accuracy, mean {mode.value} reward) = {'undefined' if r is None else f'{r:.4f}'}")


if __name__ == "__main__":
    app()
