"""
Long-running scoring endpoint for training loops.

Two transports share one schema: JSON lines over stdio (one ``ScoreRequest`` per input
line, one ``ScoreResponse`` per output line, in request order) and ``POST /v1/score``
over HTTP.
"""

import json
import logging
import sys
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Iterable, Mapping, Optional, TextIO, Union

import uvicorn
from fastapi import FastAPI, Request, Response
from fastapi.concurrency import run_in_threadpool
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .evaluation import index_instances
from .rewards import RewardConfig, RewardMode, RewardRecord, score_record
from .taskgen import TaskInstance

logger = logging.getLogger(__name__)


class ScoreRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    request_id: str
    instance: Optional[TaskInstance] = None
    dataset_id: Optional[str] = None
    completion: str
    mode: RewardMode = RewardMode.PROCESS

    @model_validator(mode="after")
    def _one_instance_source(self) -> "ScoreRequest":
        if (self.instance is None) == (self.dataset_id is None):
            raise ValueError("give exactly one of instance and dataset_id")
        return self


class ScoreResponse(BaseModel):
    request_id: Optional[str] = None
    record: Optional[RewardRecord] = None
    error: Optional[str] = None


def _describe(exc: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in e['loc']) or 'request'}: {e['msg']}" for e in exc.errors())


def _salvage_request_id(raw: Union[str, bytes]) -> Optional[str]:
    try:
        data = json.loads(raw)
    except ValueError:
        return None
    if isinstance(data, dict) and isinstance(data.get("request_id"), str):
        return data["request_id"]
    return None


class ScoringService:
    """Stateless scorer over an optional preloaded dataset (looked up by ``dataset_id``)."""

    def __init__(
        self,
        instances: Union[Mapping[str, TaskInstance], Iterable[TaskInstance]] = (),
        cfg: Optional[RewardConfig] = None,
    ):
        self.index = index_instances(instances)
        self.cfg = cfg or RewardConfig()

    def parse(self, raw: Union[str, bytes]) -> Union[ScoreRequest, ScoreResponse]:
        """The request, or the error response that answers a malformed one."""
        try:
            return ScoreRequest.model_validate_json(raw)
        except ValidationError as exc:
            return ScoreResponse(request_id=_salvage_request_id(raw), error=f"malformed request: {_describe(exc)}")

    def handle(self, request: ScoreRequest) -> ScoreResponse:
        inst = request.instance
        if inst is None:
            inst = self.index.get(request.dataset_id)
            if inst is None:
                return ScoreResponse(request_id=request.request_id, error=f"unknown dataset id {request.dataset_id!r}")
        try:
            record = score_record(inst, request.completion, request.mode, self.cfg)
        except Exception as exc:
            logger.exception("scoring failed for request %s", request.request_id)
            return ScoreResponse(request_id=request.request_id, error=f"internal error: {exc}")
        return ScoreResponse(request_id=request.request_id, record=record)

    def handle_line(self, raw: Union[str, bytes]) -> ScoreResponse:
        parsed = self.parse(raw)
        if isinstance(parsed, ScoreResponse):
            logger.debug("rejected request: %s", parsed.error)
            return parsed
        return self.handle(parsed)


# ---------------------
# stdio transport
# ---------------------

def serve_stdio(
    service: ScoringService,
    in_stream: Optional[TextIO] = None,
    out_stream: Optional[TextIO] = None,
    workers: int = 4,
    max_in_flight: Optional[int] = None,
) -> int:
    """
    Answer JSON-line requests until EOF or interrupt. Requests are scored concurrently
    but answered in input order; an interrupt stops reading and drains work already
    accepted. Returns the number of responses written.
    """
    in_stream = in_stream or sys.stdin
    out_stream = out_stream or sys.stdout
    max_in_flight = max_in_flight or workers * 4
    pending: deque[Future] = deque()
    written = 0

    def emit(future: Future) -> None:
        nonlocal written
        out_stream.write(future.result().model_dump_json() + "\n")
        out_stream.flush()
        written += 1

    with ThreadPoolExecutor(max_workers=workers) as pool:
        try:
            for line in in_stream:
                if not line.strip():
                    continue
                pending.append(pool.submit(service.handle_line, line))
                while pending and (len(pending) >= max_in_flight or pending[0].done()):
                    emit(pending.popleft())
        except KeyboardInterrupt:
            logger.info("interrupted, finishing %d in-flight requests", len(pending))
        while pending:
            emit(pending.popleft())

    logger.info("stdio service answered %d requests", written)
    return written


# ---------------------
# HTTP transport
# ---------------------

def create_app(service: ScoringService) -> FastAPI:
    from . import __version__

    app = FastAPI(title="graph-reward-kit scoring service", version=__version__)

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"status": "ok", "instances": len(service.index)}

    @app.post("/v1/score", response_model=ScoreResponse)
    async def score(request: Request) -> Response:
        parsed = service.parse(await request.body())
        if isinstance(parsed, ScoreResponse):
            return Response(content=parsed.model_dump_json(), status_code=400, media_type="application/json")
        response = await run_in_threadpool(service.handle, parsed)
        return Response(content=response.model_dump_json(), media_type="application/json")

    return app


def run_server(service: ScoringService, host: str, port: int) -> None:
    """Serve over HTTP until interrupted; uvicorn drains open requests on shutdown."""
    logger.info("scoring service listening on %s:%d", host, port)
    uvicorn.run(create_app(service), host=host, port=port, log_level="info")
