"""Export jobs: run an encoder backend over prompts or an image manifest and
write the results as an embedding store."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import variant_dim
from .formats import FormatError, write_store


class ExportError(ValueError):
    pass


@dataclass
class ExportJob:
    variant: str
    output: str

    def __post_init__(self):
        self.dim = variant_dim(self.variant)


def read_prompt_table(path) -> dict:
    """Prompt table JSON: {label: [template strings]}."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or not all(
        isinstance(v, list) and all(isinstance(t, str) for t in v) for v in doc.values()
    ):
        raise ExportError(f"{path}: prompt table must map labels to lists of strings")
    return doc


def read_image_manifest(path) -> list:
    """Image manifest JSONL: {"id": sample id, "path": image path} per line."""
    out = []
    base = Path(path).parent
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            image_path = Path(doc["path"])
            if not image_path.is_absolute():
                image_path = base / image_path
            out.append((str(doc["id"]), image_path))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ExportError(f"{path}:{lineno}: malformed manifest line: {exc}") from exc
    return out


def export_text(prompt_table: dict, job: ExportJob, backend) -> int:
    """One record per template, ids "prompt:<label>:<index>"."""
    labels = sorted(prompt_table)
    texts = []
    ids = []
    for label in labels:
        for i, template in enumerate(prompt_table[label]):
            ids.append(f"prompt:{label}:{i}")
            texts.append(template)
    if not texts:
        raise ExportError("prompt table is empty")
    vectors = backend.embed_texts(texts)
    _validate(vectors, job)
    return write_store(
        [(id, "text", vec) for id, vec in zip(ids, vectors)], job.output
    )


def export_images(manifest: list, job: ExportJob, backend) -> int:
    """One record per manifest entry, keyed by its sample id."""
    if not manifest:
        raise ExportError("image manifest is empty")
    for sample_id, path in manifest:
        if not Path(path).exists():
            raise ExportError(f"image not found: {path}")
    vectors = backend.embed_images([path for _, path in manifest])
    _validate(vectors, job)
    return write_store(
        [(sample_id, "image", vec) for (sample_id, _), vec in zip(manifest, vectors)],
        job.output,
    )


def _validate(vectors: np.ndarray, job: ExportJob) -> None:
    if vectors.shape[1] != job.dim:
        raise ExportError(
            f"backend produced dimension {vectors.shape[1]}, "
            f"variant {job.variant} documents {job.dim}"
        )
    if not np.isfinite(vectors).all():
        raise ExportError("backend produced non-finite values")
    norms = np.linalg.norm(vectors, axis=1)
    if (norms == 0).any():
        raise ExportError("backend produced a zero vector")
