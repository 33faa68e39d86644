"""Stateless text-embedding sidecar: POST /embed {"texts": [...]} returns the
backend's vectors, enabling free-text queries against the retrieval service."""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse


def create_app(backend) -> FastAPI:
    app = FastAPI(title="clip-export embedder", version="1")

    @app.get("/health")
    def health():
        return {"status": "ok", "model": backend.variant,
                "backend": backend.name, "dimension": backend.dim}

    @app.post("/embed")
    def embed(payload: dict):
        texts = payload.get("texts", [])
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            return JSONResponse(status_code=400, content={
                "code": "bad_texts", "message": "texts must be a list of strings",
            })
        vectors = backend.embed_texts(texts)
        return {
            "vectors": [[float(x) for x in row] for row in vectors],
            "dimension": backend.dim,
            "model": backend.variant,
        }

    return app


def serve(backend, host: str = "127.0.0.1", port: int = 8090):
    import uvicorn

    uvicorn.run(create_app(backend), host=host, port=port, log_level="warning")
