"""HTTP/JSON service in front of the engine.

Endpoints: GET /datasets, POST /search, POST /finetune, GET /image/{dataset}/{id}.
Request bodies reject unknown fields (400); the only 422 is a fine-tune
without both a positive and a negative label. Sessions live in memory and
die with the process; catalogs and indexes are shared read-only.
"""

from __future__ import annotations

import json
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, RedirectResponse
from pydantic import BaseModel, ConfigDict, Field

from . import engine
from .config import ServerConfig
from .engine import Dataset, EngineError, FinetuneParams, Session

SCHEMA_VERSION = 1


class EmbeddingQuery(BaseModel):
    model_config = ConfigDict(extra="forbid")
    embedding: list[float] | None = None
    text: str | None = None


class SearchRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dataset: str
    query: EmbeddingQuery
    k: int | None = Field(default=None, ge=1)


class LabelItem(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: int
    label: Literal["pos", "neg"]


class FinetuneRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dataset: str
    session_id: str | None = None
    labels: list[LabelItem] = Field(min_length=1)
    model: Literal["dbranch", "dbranch_ensemble", "dtree", "rforest"] = "dbranch"
    negative_samples: int | None = Field(default=None, ge=0)
    negative_weight: float | None = Field(default=None, gt=0)
    seed: int | None = None
    max_results: int | None = Field(default=None, ge=1)


class SessionStore:
    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, dataset: Dataset) -> Session:
        session = Session(dataset=dataset)
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)


def _fetch_text_embedding(sidecar_url: str, text: str, dim: int) -> list[float]:
    payload = json.dumps({"text": text}).encode("utf-8")
    req = urllib.request.Request(
        sidecar_url.rstrip("/") + "/embed_text",
        data=payload,
        headers={"Content-Type": "application/json"},
    )
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            body = json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
        raise HTTPException(status_code=503, detail=f"embedding sidecar unreachable: {exc}")
    embedding = body.get("embedding")
    if not isinstance(embedding, list) or len(embedding) != dim:
        raise HTTPException(status_code=503, detail="embedding sidecar returned a bad vector")
    return embedding


def create_app(datasets: dict[str, Dataset], config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig()
    app = FastAPI(title="branchsearch", version=str(SCHEMA_VERSION))
    store = SessionStore()
    app.state.sessions = store
    app.state.datasets = datasets

    if config.cors_origins:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=config.cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_as_400(request: Request, exc: RequestValidationError):
        # schema violations (bad dims, unknown fields, unknown model kind) are 400s
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def _dataset(name: str) -> Dataset:
        ds = datasets.get(name)
        if ds is None:
            raise HTTPException(status_code=404, detail=f"unknown dataset {name!r}")
        return ds

    @app.get("/")
    def root():
        return {"service": "branchsearch", "schema_version": SCHEMA_VERSION}

    @app.get("/datasets")
    def list_datasets():
        return [
            {"name": ds.name, "n": ds.catalog.n, "d_prime": ds.catalog.dim}
            for ds in datasets.values()
        ]

    @app.post("/search")
    def search(req: SearchRequest):
        ds = _dataset(req.dataset)
        d_in = ds.head.dims[0]
        if req.query.embedding is not None:
            embedding = req.query.embedding
            if len(embedding) != d_in:
                raise HTTPException(
                    status_code=400,
                    detail=f"query embedding must have {d_in} dimensions, got {len(embedding)}",
                )
        elif req.query.text is not None:
            if not config.sidecar_url:
                raise HTTPException(
                    status_code=503,
                    detail="text queries need an embedding sidecar; none is configured "
                    "(set sidecar_url, or send an embedding query instead)",
                )
            embedding = _fetch_text_embedding(config.sidecar_url, req.query.text, d_in)
        else:
            raise HTTPException(status_code=400, detail="query needs 'embedding' or 'text'")

        k = req.k or config.defaults.k
        t0 = time.perf_counter()
        hits = engine.initial_search(ds.catalog, ds.tree, embedding, ds.head, ds.quantizer, k=k)
        query_ms = (time.perf_counter() - t0) * 1000.0
        return {
            "schema_version": SCHEMA_VERSION,
            "results": [
                {"id": rec.id, "uri": rec.uri, "score": dist} for rec, dist in hits
            ],
            "stats": {"query_ms": query_ms, "n_results": len(hits), "k": k},
        }

    @app.post("/finetune")
    def finetune(req: FinetuneRequest):
        ds = _dataset(req.dataset)
        if req.session_id is None:
            session = store.create(ds)
        else:
            session = store.get(req.session_id)
            if session is None or session.dataset.name != req.dataset:
                raise HTTPException(status_code=404, detail=f"unknown session {req.session_id!r}")

        params = FinetuneParams(
            model_kind=req.model,
            negative_samples=(
                req.negative_samples
                if req.negative_samples is not None
                else config.defaults.negative_samples
            ),
            negative_weight=(
                req.negative_weight
                if req.negative_weight is not None
                else config.defaults.negative_weight
            ),
            seed=req.seed if req.seed is not None else 0,
            max_results=(
                req.max_results if req.max_results is not None else config.defaults.max_results
            ),
        )

        with session.lock:
            try:
                session.apply_labels({item.id: item.label == "pos" for item in req.labels})
            except EngineError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            try:
                results, stats = engine.finetune(session, params)
            except EngineError as exc:
                raise HTTPException(status_code=422, detail=str(exc))

        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session.session_id,
            "results": [
                {"id": rec.id, "uri": rec.uri, "score": score} for rec, score in results
            ],
            "stats": {
                "train_ms": stats.train_ms,
                "query_ms": stats.query_ms,
                "n_candidates": stats.n_candidates,
                "n_positives": stats.n_positives,
                "model_kind": stats.model_kind,
                "iteration": stats.iteration,
                "n_negatives_sampled": stats.n_negatives_sampled,
            },
        }

    @app.get("/image/{dataset}/{record_id}")
    def image(dataset: str, record_id: int):
        ds = _dataset(dataset)
        row = ds.catalog.row_of_id().get(record_id)
        if row is None:
            raise HTTPException(status_code=404, detail=f"unknown record id {record_id}")
        uri = ds.catalog.records[row].uri
        if uri.startswith("http://") or uri.startswith("https://"):
            return RedirectResponse(url=uri, status_code=302)
        path = Path(uri)
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"image file not found: {uri}")
        return FileResponse(path)

    return app
