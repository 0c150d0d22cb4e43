"""Synthetic connectivity / shortest-path datasets with prompts and gold responses."""

import logging
import random
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, StrictBool, StrictInt, ValidationError, model_validator

from .errors import GenerationError, InputError
from .graph import (
    GenGraphConfig,
    Graph,
    bfs_discovery_edges,
    bfs_path,
    gen_graph,
    is_connected,
    render_graph_text,
    shortest_path_length,
)
from .parser import (
    ConnectivityAnswer,
    ConnectivityStep,
    ShortestPathAnswer,
    ShortestPathStep,
    TaskKind,
)
from .serde import ArtifactSerde

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 10_000
MANIFEST_NAME = "manifest.json"

CONNECTIVITY_INSTRUCTIONS = (
    "Format your output in three parts.\n"
    "First, reason inside <think>...</think>.\n"
    "Then, inside <response>...</response>, list every edge you use on its own line, "
    'written as "U -> V".\n'
    'Finally, inside <answer>...</answer>, write only "yes" or "no".'
)

SHORTEST_PATH_INSTRUCTIONS = (
    "Format your output in three parts.\n"
    "First, reason inside <think>...</think>.\n"
    "Then, inside <response>...</response>, list every edge of your path in order on its own line, "
    'written as "U -> V : W ; total=T", where W is the edge weight and T is the total weight so far.\n'
    'Finally, inside <answer>...</answer>, write only "path=A->B->...->Z ; length=L".'
)

FORMAT_INSTRUCTIONS = {
    TaskKind.CONNECTIVITY: CONNECTIVITY_INSTRUCTIONS,
    TaskKind.SHORTEST_PATH: SHORTEST_PATH_INSTRUCTIONS,
}


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class TaskInstance(BaseModel):
    """One synthetic question. ``ground_truth`` is a bool (connectivity) or a length."""

    id: str
    kind: TaskKind
    graph: Graph
    source: int
    target: int
    ground_truth: Union[StrictBool, StrictInt]

    @model_validator(mode="after")
    def _check_consistency(self) -> "TaskInstance":
        if self.source == self.target:
            raise ValueError("source and target must differ")
        for name, node in (("source", self.source), ("target", self.target)):
            if not self.graph.has_node(node):
                raise ValueError(f"{name}={node} is not a node of the graph")
        if self.kind is TaskKind.CONNECTIVITY:
            if not isinstance(self.ground_truth, bool):
                raise ValueError("connectivity ground_truth must be a boolean")
        else:
            if not self.graph.weighted:
                raise ValueError("shortest_path instances need a weighted graph")
            if isinstance(self.ground_truth, bool) or self.ground_truth < 1:
                raise ValueError("shortest_path ground_truth must be a positive length")
        return self

    def key(self) -> tuple:
        return (self.graph.key(), self.source, self.target)


class DatasetRow(TaskInstance):
    """JSONL row: the instance plus its rendered prompt and gold completion."""

    prompt: str
    gold: str


def _default_counts() -> dict[TaskKind, int]:
    return {kind: 500 for kind in TaskKind}


class DatasetSpec(BaseModel):
    train_counts: dict[TaskKind, int] = Field(default_factory=_default_counts)
    test_counts: dict[TaskKind, int] = Field(default_factory=_default_counts)
    graph: GenGraphConfig = Field(default_factory=GenGraphConfig)
    seed: int = Field(default=0, ge=0)
    # fraction of connectivity questions whose answer is "yes"; applied as an exact quota
    yes_share: float = Field(default=0.5, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_counts(self) -> "DatasetSpec":
        for split, counts in ((Split.TRAIN, self.train_counts), (Split.TEST, self.test_counts)):
            for kind in TaskKind:
                if counts.get(kind, 0) <= 0:
                    raise ValueError(f"{split.value} count for {kind.value} must be positive")
        return self

    def counts(self, split: Split) -> dict[TaskKind, int]:
        return self.train_counts if split is Split.TRAIN else self.test_counts

    def yes_quota(self, split: Split) -> int:
        return int(round(self.counts(split)[TaskKind.CONNECTIVITY] * self.yes_share))


class Dataset(BaseModel):
    train: list[TaskInstance]
    test: list[TaskInstance]

    def split(self, split: Split) -> list[TaskInstance]:
        return self.train if split is Split.TRAIN else self.test


# ---------------------
# Generation
# ---------------------

def graph_config_for(kind: TaskKind, cfg: GenGraphConfig) -> GenGraphConfig:
    """Connectivity graphs are unweighted, shortest-path graphs weighted."""
    return cfg.model_copy(update={"weighted": kind is TaskKind.SHORTEST_PATH})


def derive_seed(master: int, *key: int) -> int:
    """Independent seed for the stream addressed by ``key`` (split, kind, index, retry)."""
    state = np.random.SeedSequence(master, spawn_key=key).generate_state(1, dtype=np.uint64)
    return int(state[0])


def gen_instance(
    kind: TaskKind,
    cfg: GenGraphConfig,
    label: Optional[bool] = None,
    seed: int = 0,
    instance_id: Optional[str] = None,
) -> TaskInstance:
    """
    Rejection-sample graphs and endpoints until the requested connectivity label holds
    (shortest-path questions always need a connected pair).
    """
    if kind is TaskKind.SHORTEST_PATH:
        if not cfg.weighted:
            raise InputError("shortest_path instances need cfg.weighted=True")
        if label is False:
            raise InputError("shortest_path instances always have a connected source and target")

    rng = random.Random(seed)
    for _ in range(MAX_ATTEMPTS):
        graph = gen_graph(cfg, rng.getrandbits(64))
        source, target = rng.sample(range(graph.n), 2)
        connected = is_connected(graph, source, target)
        if kind is TaskKind.CONNECTIVITY:
            if label is not None and connected != label:
                continue
            ground_truth: Union[bool, int] = connected
        else:
            if not connected:
                continue
            ground_truth = shortest_path_length(graph, source, target)[0]
        return TaskInstance(
            id=instance_id or f"{kind.value}-{seed}",
            kind=kind,
            graph=graph,
            source=source,
            target=target,
            ground_truth=ground_truth,
        )

    wanted = "a connected source/target pair" if label is None else f"connectivity label {label}"
    raise GenerationError(
        f"no {kind.value} instance with {wanted} after {MAX_ATTEMPTS} attempts (graph config {cfg})"
    )


def _build_split(spec: DatasetSpec, split: Split, taken: set[tuple]) -> list[TaskInstance]:
    split_index = list(Split).index(split)
    instances: list[TaskInstance] = []
    for kind_index, kind in enumerate(TaskKind):
        count = spec.counts(split)[kind]
        cfg = graph_config_for(kind, spec.graph)
        labels: list[Optional[bool]] = [None] * count
        if kind is TaskKind.CONNECTIVITY:
            yes = spec.yes_quota(split)
            labels = [True] * yes + [False] * (count - yes)
            random.Random(derive_seed(spec.seed, split_index, kind_index)).shuffle(labels)

        for index, label in enumerate(labels):
            instance_id = f"{kind.value}-{split.value}-{index}"
            for retry in range(MAX_ATTEMPTS):
                seed = derive_seed(spec.seed, split_index, kind_index, index, retry)
                instance = gen_instance(kind, cfg, label, seed, instance_id=instance_id)
                if instance.key() not in taken:
                    break
                logger.debug("%s collides with an earlier split, regenerating", instance_id)
            else:
                raise GenerationError(f"could not draw a fresh instance for {instance_id}")
            instances.append(instance)

    logger.info("built %s split with %d instances", split.value, len(instances))
    return instances


def build_dataset(spec: DatasetSpec) -> Dataset:
    train = _build_split(spec, Split.TRAIN, taken=set())
    test = _build_split(spec, Split.TEST, taken={instance.key() for instance in train})
    return Dataset(train=train, test=test)


# ---------------------
# Rendering
# ---------------------

def render_prompt(inst: TaskInstance) -> str:
    if inst.kind is TaskKind.CONNECTIVITY:
        question = f"Question: Is there a path between node {inst.source} and node {inst.target}?"
    else:
        question = (
            f"Question: What is the shortest path from node {inst.source} to node {inst.target}? "
            "Give the path and its total weight."
        )
    return f"{render_graph_text(inst.graph)}\n{question}\n{FORMAT_INSTRUCTIONS[inst.kind]}"


def render_completion(think: str, step_lines: list[str], answer: str) -> str:
    """The canonical tag layout shared by gold responses and perturbations."""
    body = "".join(f"{line}\n" for line in step_lines)
    return f"<think>\n{think}\n</think>\n<response>\n{body}</response>\n<answer>\n{answer}\n</answer>"


def gold_steps(inst: TaskInstance) -> list[Union[ConnectivityStep, ShortestPathStep]]:
    g = inst.graph
    if inst.kind is TaskKind.CONNECTIVITY:
        if inst.ground_truth:
            path = bfs_path(g, inst.source, inst.target)
            return [ConnectivityStep(u=u, v=v) for u, v in zip(path, path[1:])]
        return [ConnectivityStep(u=u, v=v) for u, v in bfs_discovery_edges(g, inst.source)]

    _, witness = shortest_path_length(g, inst.source, inst.target)
    steps = []
    total = 0
    for u, v in zip(witness.nodes, witness.nodes[1:]):
        weight = g.weight(u, v)
        total += weight
        steps.append(ShortestPathStep(u=u, v=v, weight=weight, total=total))
    return steps


def gold_answer(inst: TaskInstance) -> Union[ConnectivityAnswer, ShortestPathAnswer]:
    if inst.kind is TaskKind.CONNECTIVITY:
        return ConnectivityAnswer(claim=inst.ground_truth)
    _, witness = shortest_path_length(inst.graph, inst.source, inst.target)
    return ShortestPathAnswer(path=witness.nodes, length=inst.ground_truth)


def _gold_think(inst: TaskInstance, steps: list) -> str:
    s, t = inst.source, inst.target
    if inst.kind is TaskKind.SHORTEST_PATH:
        return (
            f"Run Dijkstra's algorithm from node {s}. The cheapest route to node {t} "
            f"uses {len(steps)} edge(s) with total weight {inst.ground_truth}."
        )
    if inst.ground_truth:
        return f"A breadth-first search from node {s} reaches node {t} after {len(steps)} edge(s)."
    reached = sorted({s} | {step.v for step in steps})
    listed = ", ".join(str(v) for v in reached)
    return f"A breadth-first search from node {s} only reaches nodes {listed}, so node {t} is unreachable."


def render_gold_response(inst: TaskInstance) -> str:
    steps = gold_steps(inst)
    return render_completion(
        _gold_think(inst, steps),
        [step.render() for step in steps],
        gold_answer(inst).render(),
    )


# ---------------------
# JSONL I/O
# ---------------------

def to_row(inst: TaskInstance) -> DatasetRow:
    return DatasetRow.model_validate(
        {**inst.model_dump(), "prompt": render_prompt(inst), "gold": render_gold_response(inst)}
    )


def write_jsonl(path: Path, instances: Iterable[TaskInstance]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for inst in instances:
            fp.write(to_row(inst).model_dump_json() + "\n")
            count += 1
    return count


def read_jsonl(path: Path) -> list[TaskInstance]:
    instances = []
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                instances.append(TaskInstance.model_validate_json(line))
            except ValidationError as exc:
                raise InputError(f"{path}:{lineno}: invalid task instance: {exc}") from exc
    return instances


def write_dataset(dataset: Dataset, out_dir: Union[str, Path], spec: Optional[DatasetSpec] = None) -> dict[Split, Path]:
    """``train.jsonl`` and ``test.jsonl`` under ``out_dir``, plus ``manifest.json`` when a spec is given."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split in Split:
        path = out_dir / f"{split.value}.jsonl"
        count = write_jsonl(path, dataset.split(split))
        logger.info("wrote %d rows to %s", count, path)
        paths[split] = path
    if spec is not None:
        ArtifactSerde.dump_file(spec, out_dir / MANIFEST_NAME)
    return paths


def read_dataset(path: Union[str, Path]) -> list[TaskInstance]:
    """Instances from a JSONL file, or from every split file of a dataset directory."""
    path = Path(path)
    if not path.is_dir():
        return read_jsonl(path)
    instances = []
    for split in Split:
        split_path = path / f"{split.value}.jsonl"
        if split_path.is_file():
            instances.extend(read_jsonl(split_path))
    if not instances:
        raise InputError(f"{path} holds no train.jsonl or test.jsonl")
    return instances
