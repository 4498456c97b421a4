"""Tiny HTTP service turning query text into a 512-d embedding."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict


class EmbedTextRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    text: str


def create_app(encoder) -> FastAPI:
    app = FastAPI(title="embed-sidecar")

    @app.get("/")
    def root():
        return {"service": "embed-sidecar", "backend": encoder.name, "dim": 512}

    @app.post("/embed_text")
    def embed_text(req: EmbedTextRequest):
        if not req.text.strip():
            raise HTTPException(status_code=400, detail="text must be non-empty")
        vector = encoder.embed_text(req.text)
        return {"embedding": vector.tolist()}

    return app
