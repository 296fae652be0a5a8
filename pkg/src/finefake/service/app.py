"""FastAPI service wrapping the core package.

Synchronous job endpoints: each call runs the requested synthesis,
training, evaluation, or visualization to completion and returns the
result record. Core error classes map onto stable status codes and an
`error_kind` field the CLI translates into exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import (
    CheckpointError,
    ConfigurationError,
    DataError,
    ProtocolError,
    SelectionError,
    ShapeError,
)
from .schemas import (
    EvalRequest,
    EvalResponse,
    GradCamRequest,
    GradCamResponse,
    HealthResponse,
    SynthRequest,
    SynthResponse,
    TrainRequest,
    TrainResponse,
)

_ERROR_STATUS = {
    "config": 400,
    "protocol": 409,
    "checkpoint": 424,
}


def _kind(exc: Exception) -> str:
    if isinstance(exc, (ConfigurationError, DataError, ShapeError)):
        return "config"
    if isinstance(exc, (ProtocolError, SelectionError)):
        return "protocol"
    if isinstance(exc, CheckpointError):
        return "checkpoint"
    return "internal"


def create_app() -> FastAPI:
    app = FastAPI(title="finefake", version=__version__)

    @app.exception_handler(Exception)
    async def _core_error(request: Request, exc: Exception) -> JSONResponse:
        kind = _kind(exc)
        status = _ERROR_STATUS.get(kind, 500)
        return JSONResponse(
            status_code=status, content={"error_kind": kind, "detail": str(exc)}
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    # the runs module imports the schemas, so import it lazily here
    from .. import runs

    @app.post("/synth", response_model=SynthResponse)
    def synth(request: SynthRequest) -> SynthResponse:
        return runs.run_synth(request)

    @app.post("/train", response_model=TrainResponse)
    def train(request: TrainRequest) -> TrainResponse:
        return runs.run_train(request)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(request: EvalRequest) -> EvalResponse:
        return runs.run_eval(request)

    @app.post("/gradcam", response_model=GradCamResponse)
    def gradcam(request: GradCamRequest) -> GradCamResponse:
        return runs.run_gradcam(request)

    return app
