"""Reward-config resolution and the per-command run configuration."""

import logging
import os
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InputError
from .rewards import RewardConfig, RewardMode
from .serde import ArtifactSerde

logger = logging.getLogger(__name__)

REWARD_CONFIG_ENV = "GRK_REWARD_CONFIG"


def load_reward_config(path: Union[str, Path, None] = None) -> RewardConfig:
    """
    Resolve reward constants: explicit ``path``, else the file named by
    ``$GRK_REWARD_CONFIG``, else the defaults. A file may be a serde envelope or a
    plain JSON object holding any subset of the constants.
    """
    if path is None:
        path = os.environ.get(REWARD_CONFIG_ENV) or None
        if path is not None:
            logger.debug("reward config from $%s: %s", REWARD_CONFIG_ENV, path)
    if path is None:
        return RewardConfig()
    cfg = ArtifactSerde.load_file(path, expected=RewardConfig)
    logger.info("loaded reward config from %s", path)
    return cfg


class ServiceBind(BaseModel):
    """Where the scoring service listens: ``addr`` (HOST:PORT) or stdio, never both."""

    addr: Optional[str] = None
    stdio: bool = False
    workers: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def _exactly_one(self) -> "ServiceBind":
        if (self.addr is None) == (not self.stdio):
            raise ValueError("give exactly one of --addr and --stdio")
        if self.addr is not None:
            host, sep, port = self.addr.rpartition(":")
            if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
                raise ValueError(f"--addr must look like HOST:PORT, got {self.addr!r}")
        return self

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.addr.rpartition(":")
        return host, int(port)


class RunConfig(BaseModel):
    """Everything one CLI command needs, validated before any work starts."""

    model_config = ConfigDict(extra="forbid")

    dataset: list[Path] = Field(default_factory=list)
    transcripts: Optional[Path] = None
    # transcripts may also arrive on stdin, but not from both places
    transcripts_stdin: bool = False
    spec: Optional[Path] = None
    out: Path = Path(".")
    reward: RewardConfig = Field(default_factory=RewardConfig)
    modes: list[RewardMode] = Field(default_factory=lambda: [RewardMode.PROCESS])
    seed: Optional[int] = Field(default=None, ge=0)
    workers: int = Field(default=1, ge=1)
    bind: Optional[ServiceBind] = None

    @model_validator(mode="after")
    def _check_inputs(self) -> "RunConfig":
        for path in [*self.dataset, self.transcripts, self.spec]:
            if path is not None and not path.exists():
                raise ValueError(f"input file not found: {path}")
        if self.transcripts is not None and self.transcripts_stdin:
            raise ValueError("read transcripts from a file or from stdin, not both")
        if not self.modes:
            raise ValueError("at least one reward mode is required")
        return self

    def require_transcripts(self) -> None:
        if self.transcripts is None and not self.transcripts_stdin:
            raise InputError("no transcript source: pass a transcript file or '-' for stdin")
