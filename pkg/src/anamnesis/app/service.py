"""HTTP inference service: GET /health, GET /ontology, POST /extract."""
from __future__ import annotations

import logging
import os
import threading
from collections.abc import Callable
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from ..ontology import SymptomOntology
from .pipeline import Pipeline, PipelineError, StructuredSummary

logger = logging.getLogger(__name__)

DEFAULT_MAX_CHARS = 20_000
ENV_ARTIFACTS = "ANAMNESIS_ARTIFACTS"
ENV_ENCODER_CACHE = "ANAMNESIS_ENCODER_CACHE"
ENV_HOST = "ANAMNESIS_HOST"
ENV_PORT = "ANAMNESIS_PORT"
ENV_MAX_CHARS = "ANAMNESIS_MAX_CHARS"


class ExtractRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text: str
    threshold: float | None = Field(default=None, ge=0.0, le=1.0)


class ServiceState:
    """Holds the pipeline once loaded; handlers only read it."""

    def __init__(self):
        self.pipeline: Pipeline | None = None
        self.error: str | None = None
        self.ready = threading.Event()

    def load(self, loader: Callable[[], Pipeline]) -> None:
        try:
            self.pipeline = loader()
        except Exception as exc:  # surfaced through /health and 503s
            logger.exception("model loading failed")
            self.error = f"{type(exc).__name__}: {exc}"
        finally:
            self.ready.set()


def discover_artifacts(root: str | Path) -> tuple[Path, list[Path]]:
    """``root/classifier`` plus every artifact directory under ``root/extractors``."""
    root = Path(root)
    classifier = root / "classifier"
    extractors = sorted(p for p in (root / "extractors").glob("*") if (p / "manifest.json").exists())
    if not (classifier / "manifest.json").exists():
        raise FileNotFoundError(f"no classifier artifact at {classifier}")
    if not extractors:
        raise FileNotFoundError(f"no extractor artifacts under {root / 'extractors'}")
    return classifier, extractors


def create_app(
    ontology: SymptomOntology,
    loader: Callable[[], Pipeline] | None = None,
    max_chars: int | None = None,
    background: bool = True,
) -> FastAPI:
    """Build the service; ``loader`` runs in a background thread at startup unless ``background`` is False."""
    if max_chars is None:
        max_chars = int(os.environ.get(ENV_MAX_CHARS, DEFAULT_MAX_CHARS))
    if max_chars < 1:
        raise ValueError("max_chars must be positive")
    state = ServiceState()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if loader is not None:
            if background:
                threading.Thread(target=state.load, args=(loader,), daemon=True).start()
            else:
                state.load(loader)
        yield

    app = FastAPI(title="anamnesis", lifespan=lifespan)
    app.state.service = state

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": "malformed request body"})

    def unavailable() -> JSONResponse:
        detail = "model loading failed: " + state.error if state.error else "models are still loading"
        return JSONResponse(status_code=503, content={"detail": detail})

    @app.get("/health")
    def health():
        if state.pipeline is None:
            return JSONResponse(status_code=503, content={"status": "error" if state.error else "loading"})
        return {"status": "ok"}

    @app.get("/ontology")
    def get_ontology():
        return ontology.to_document()

    @app.post("/extract", response_model=StructuredSummary,
              responses={400: {"description": "empty, oversized or malformed request"},
                         503: {"description": "models not loaded"}})
    def post_extract(body: ExtractRequest):
        if not body.text.strip():
            return JSONResponse(status_code=400, content={"detail": "text is empty"})
        if len(body.text) > max_chars:
            return JSONResponse(status_code=400, content={"detail": f"text exceeds {max_chars} characters"})
        pipeline = state.pipeline
        if pipeline is None:
            return unavailable()
        try:
            return pipeline.extract(body.text, body.threshold)
        except PipelineError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})

    return app
