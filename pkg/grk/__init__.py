__version__ = "0.1.0"

from .errors import GenerationError, GrkError, InputError
from .graph import GenGraphConfig, Graph, PathWitness, gen_graph, is_connected, shortest_path_length, validate_path
from .parser import ParsedResponse, TaskKind, extract_sections, parse_response
from .rewards import RewardBreakdown, RewardConfig, RewardMode, RewardRecord, score_response
from .serde import ArtifactSerde
from .taskgen import Dataset, DatasetSpec, TaskInstance, build_dataset, gen_instance, render_gold_response

__all__ = [
    "__version__",
    "ArtifactSerde",
    "Dataset",
    "DatasetSpec",
    "GenGraphConfig",
    "GenerationError",
    "Graph",
    "GrkError",
    "InputError",
    "ParsedResponse",
    "PathWitness",
    "RewardBreakdown",
    "RewardConfig",
    "RewardMode",
    "RewardRecord",
    "TaskInstance",
    "TaskKind",
    "build_dataset",
    "extract_sections",
    "gen_graph",
    "gen_instance",
    "is_connected",
    "parse_response",
    "render_gold_response",
    "score_response",
    "shortest_path_length",
    "validate_path",
]
