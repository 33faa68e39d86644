"""HTTP JSON API over a loaded embedding corpus: query, classify, browse,
and ingest, versioned under /v1.

Requests are served from an immutable snapshot; ingestion builds a new
snapshot and swaps it atomically, so no request ever sees a half-updated
corpus. Free-text prompts need a live text embedder; the table-backed
embedder resolves only strings present in the prompt table or store.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, File, Request, UploadFile
from fastapi.responses import JSONResponse

from .evalharness import Annotation, EvalError, read_annotations
from .fusion import FusionStrategy, JointQuery, QueryError, joint_query
from .retrieval import (
    ClassPromptSet,
    DegenerateEmbeddingError,
    PromptSet,
    RetrievalError,
    zero_shot_classify,
)
from .store import EmbeddingStore, Modality, StoreError, read_store_bytes

MAX_K = 1000
MAX_SAMPLE_POINTS = 4096


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class PromptNotFoundError(Exception):
    pass


class EmbedderUnavailableError(Exception):
    pass


class TableTextEmbedder:
    """Deterministic embedder backed by precomputed prompt embeddings.

    Resolves a text either as a prompt-table template (stored under
    "prompt:<label>:<index>") or as a raw store key of text modality.
    """

    def __init__(self, store: EmbeddingStore, prompt_table: dict | None = None):
        self._vectors = {}
        prompt_table = prompt_table or {}
        for label, templates in prompt_table.items():
            for i, text in enumerate(templates):
                e = store.get(f"prompt:{label}:{i}", Modality.TEXT)
                if e is None:
                    raise StoreError(f"prompt table references missing key prompt:{label}:{i}")
                self._vectors[text] = e.vector.astype(np.float64)
        for id, modality, vec in store.items():
            if modality is Modality.TEXT:
                self._vectors.setdefault(id, vec.astype(np.float64))

    def embed(self, texts) -> list:
        out = []
        for text in texts:
            vec = self._vectors.get(text)
            if vec is None:
                raise PromptNotFoundError(text)
            out.append(vec.copy())
        return out


class RemoteTextEmbedder:
    """Client for a sidecar embedding endpoint: POST {url}/embed {"texts": [...]}."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def embed(self, texts) -> list:
        import httpx

        try:
            resp = httpx.post(f"{self.url}/embed", json={"texts": list(texts)},
                              timeout=self.timeout)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise EmbedderUnavailableError(str(exc)) from exc
        doc = resp.json()
        return [np.asarray(v, dtype=np.float64) for v in doc["vectors"]]


@dataclass
class EngineSnapshot:
    store: EmbeddingStore = field(default_factory=EmbeddingStore)
    clouds: dict = field(default_factory=dict)  # sample id -> PointCloud
    annotations: dict = field(default_factory=dict)  # sample id -> Annotation
    prompt_table: dict = field(default_factory=dict)  # label -> [templates]


class Engine:
    """Owns the current snapshot and the text embedder."""

    def __init__(self, snapshot: EngineSnapshot, embedder):
        self.snapshot = snapshot
        self.embedder = embedder

    def resolve_prompt_set(self, snapshot: EngineSnapshot, name: str, prompts) -> PromptSet:
        """Expand prompt strings through the table (labels -> templates) and
        embed every resulting template into one prompt set."""
        templates = []
        for text in prompts:
            templates.extend(snapshot.prompt_table.get(text, [text]))
        vectors = self.embedder.embed(templates)
        return PromptSet(name, np.stack(vectors))


def downsample_points(points: np.ndarray, limit: int = MAX_SAMPLE_POINTS) -> np.ndarray:
    """Deterministic stride-based downsampling to at most `limit` rows."""
    n = points.shape[0]
    if n <= limit:
        return points
    stride = -(-n // limit)
    return points[::stride]


def create_app(
    store: EmbeddingStore | None = None,
    embedder=None,
    clouds: dict | None = None,
    annotations: dict | None = None,
    prompt_table: dict | None = None,
):
    snapshot = EngineSnapshot(
        store=store if store is not None else EmbeddingStore(),
        clouds=dict(clouds or {}),
        annotations=dict(annotations or {}),
        prompt_table=dict(prompt_table or {}),
    )
    if embedder is None:
        embedder = TableTextEmbedder(snapshot.store, snapshot.prompt_table)
    engine = Engine(snapshot, embedder)

    app = FastAPI(title="pointbridge", version="1")
    app.state.engine = engine

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    def fail(status: int, code: str, message: str):
        raise ServiceError(status, code, message)

    @app.get("/v1/health")
    def health():
        snap = engine.snapshot
        return {
            "status": "ok",
            "corpus_size": len(snap.store),
            "dimension": snap.store.d,
        }

    @app.get("/v1/samples")
    def list_samples(offset: int = 0, limit: int = 50):
        if offset < 0 or limit < 1:
            fail(400, "bad_range", "offset must be >= 0 and limit >= 1")
        snap = engine.snapshot
        ids = sorted(set(snap.store.ids()) | set(snap.clouds))
        ids = [id for id in ids if not id.startswith("prompt:")]
        page = ids[offset:offset + limit]
        modalities = {
            id: [m.value for m in Modality if (id, m) in snap.store]
            for id in page
        }
        return {
            "total": len(ids),
            "offset": offset,
            "samples": [{"id": id, "modalities": modalities[id]} for id in page],
        }

    @app.get("/v1/samples/{sample_id}")
    def get_sample(sample_id: str):
        snap = engine.snapshot
        known = (
            sample_id in snap.clouds
            or sample_id in snap.annotations
            or any((sample_id, m) in snap.store for m in Modality)
        )
        if not known:
            fail(404, "unknown_sample", f"no sample {sample_id!r}")
        body = {"id": sample_id}
        ann = snap.annotations.get(sample_id)
        if ann is not None:
            body["meta"] = dict(ann.meta)
        cloud = snap.clouds.get(sample_id)
        if cloud is not None:
            pts = downsample_points(cloud.points)
            body["points"] = [[float(v) for v in row] for row in pts]
        return body

    @app.post("/v1/query")
    def query(payload: dict):
        t0 = time.perf_counter()
        snap = engine.snapshot
        try:
            strategy = FusionStrategy(payload.get("strategy", ""))
        except ValueError:
            fail(400, "unknown_strategy", f"unknown strategy {payload.get('strategy')!r}")
        k = payload.get("k", 10)
        if not isinstance(k, int) or not 1 <= k <= MAX_K:
            fail(400, "bad_k", f"k must be an integer in [1, {MAX_K}]")
        candidate_k = payload.get("candidate_k", 100)
        if not isinstance(candidate_k, int) or candidate_k < 1:
            fail(400, "bad_candidate_k", "candidate_k must be a positive integer")
        prompts = payload.get("prompts") or {}
        try:
            image_prompts = (
                engine.resolve_prompt_set(snap, "image-query", prompts["image"])
                if prompts.get("image") else None
            )
            lidar_prompts = (
                engine.resolve_prompt_set(snap, "lidar-query", prompts["lidar"])
                if prompts.get("lidar") else None
            )
            jq = JointQuery(strategy, k=k, image_prompts=image_prompts,
                            lidar_prompts=lidar_prompts,
                            candidate_k=max(candidate_k, k))
            results = joint_query(jq, snap.store)
        except PromptNotFoundError as exc:
            fail(422, "prompt_not_found", f"prompt not found in table: {exc.args[0]!r}")
        except EmbedderUnavailableError as exc:
            fail(503, "embedder_unavailable", str(exc))
        except (QueryError, RetrievalError) as exc:
            fail(400, "bad_query", str(exc))
        body = {
            "results": [
                {
                    "id": r.id,
                    "fused_score": r.fused_score,
                    "rank": r.rank,
                    **({"s_image": r.s_image} if r.s_image is not None else {}),
                    **({"s_lidar": r.s_lidar} if r.s_lidar is not None else {}),
                }
                for r in results
            ],
            "timing_ms": (time.perf_counter() - t0) * 1e3,
        }
        return body

    @app.post("/v1/classify")
    def classify(payload: dict):
        snap = engine.snapshot
        sample_id = payload.get("sample_id")
        modality = payload.get("modality", Modality.LIDAR.value)
        try:
            modality = Modality(modality)
        except ValueError:
            fail(400, "bad_modality", f"unknown modality {modality!r}")
        embedding = snap.store.get(sample_id, modality) if sample_id else None
        if embedding is None:
            fail(404, "unknown_sample", f"no {modality.value} embedding for {sample_id!r}")
        classes = payload.get("classes") or []
        temperature = payload.get("temperature", 100.0)
        try:
            prompt_sets = [
                engine.resolve_prompt_set(snap, c["name"], c["prompts"])
                for c in classes
            ]
            class_set = ClassPromptSet(prompt_sets)
            probs = zero_shot_classify(
                embedding.vector.astype(np.float64), class_set, temperature
            )
        except PromptNotFoundError as exc:
            fail(422, "prompt_not_found", f"prompt not found in table: {exc.args[0]!r}")
        except EmbedderUnavailableError as exc:
            fail(503, "embedder_unavailable", str(exc))
        except (KeyError, TypeError) as exc:
            fail(400, "bad_classes", f"malformed classes: {exc}")
        except (RetrievalError, DegenerateEmbeddingError) as exc:
            fail(400, "bad_classes", str(exc))
        return {"probs": {name: float(p) for name, p in zip(class_set.names, probs)}}

    @app.post("/v1/ingest")
    async def ingest(
        stores: list[UploadFile] = File(default=[]),
        annotations: UploadFile | None = File(default=None),
    ):
        snap = engine.snapshot
        new_store = EmbeddingStore()
        new_store.merge(snap.store)
        added = 0
        try:
            for upload in stores:
                data = await upload.read()
                incoming = read_store_bytes(data, upload.filename or "<upload>")
                new_store.merge(incoming)
                added += len(incoming)
        except StoreError as exc:
            fail(400, "bad_store_file", str(exc))
        new_annotations = dict(snap.annotations)
        if annotations is not None:
            import json as _json

            text = (await annotations.read()).decode("utf-8")
            try:
                for line in text.splitlines():
                    if not line.strip():
                        continue
                    doc = _json.loads(line)
                    ann = Annotation(doc["sample_id"], doc.get("boxes", []),
                                     doc.get("meta", {}))
                    new_annotations[ann.sample_id] = ann
            except (EvalError, KeyError, ValueError) as exc:
                fail(400, "bad_annotations", str(exc))
        engine.snapshot = EngineSnapshot(
            store=new_store,
            clouds=snap.clouds,
            annotations=new_annotations,
            prompt_table=snap.prompt_table,
        )
        if isinstance(engine.embedder, TableTextEmbedder):
            engine.embedder = TableTextEmbedder(new_store, engine.snapshot.prompt_table)
        return {
            "embeddings_added": added,
            "corpus_size": len(new_store),
            "annotations": len(new_annotations),
        }

    return app


def serve(app, host: str = "127.0.0.1", port: int = 8080):
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")
