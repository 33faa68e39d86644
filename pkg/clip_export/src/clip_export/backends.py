"""Encoder backends: published CLIP models via transformers, plus a
deterministic hash featurizer for tests and offline development.

Every backend exposes embed_texts(texts) / embed_images(paths) returning
float32 arrays of the variant's dimension.
"""

from __future__ import annotations

import hashlib

import numpy as np

VARIANT_DIMS = {
    "ViT-L/14": 768,
    "ViT-B/32": 512,
}

HF_MODEL_NAMES = {
    "ViT-L/14": "openai/clip-vit-large-patch14",
    "ViT-B/32": "openai/clip-vit-base-patch32",
}


class BackendError(RuntimeError):
    pass


class MissingWeightsError(BackendError):
    pass


def variant_dim(variant: str) -> int:
    try:
        return VARIANT_DIMS[variant]
    except KeyError:
        raise BackendError(
            f"unknown model variant {variant!r}; known: {sorted(VARIANT_DIMS)}"
        ) from None


def _hash_vector(data: bytes, dim: int) -> np.ndarray:
    """Unit vector seeded from a digest of the input bytes; deterministic and
    byte-identical across processes. Carries no semantics."""
    digest = hashlib.sha256(data).digest()
    seed = int.from_bytes(digest[:8], "little")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return (vec / np.linalg.norm(vec)).astype(np.float32)


class HashBackend:
    """Deterministic featurizer for plumbing tests: identical inputs give
    byte-identical vectors of the variant's true dimension."""

    name = "hash"

    def __init__(self, variant: str):
        self.variant = variant
        self.dim = variant_dim(variant)

    def embed_texts(self, texts) -> np.ndarray:
        return np.stack([_hash_vector(t.encode("utf-8"), self.dim) for t in texts]) \
            if texts else np.zeros((0, self.dim), np.float32)

    def embed_images(self, paths) -> np.ndarray:
        from PIL import Image

        vecs = []
        for path in paths:
            with Image.open(path) as img:
                data = img.convert("RGB").tobytes()
            vecs.append(_hash_vector(data, self.dim))
        return np.stack(vecs) if vecs else np.zeros((0, self.dim), np.float32)


class ClipBackend:
    """Published CLIP encoders through transformers.

    Weights load from `model_path` when given, otherwise from the local
    Hugging Face cache of the variant's hub name. No weights available raises
    MissingWeightsError.
    """

    name = "clip"

    def __init__(self, variant: str, model_path: str | None = None):
        self.variant = variant
        self.dim = variant_dim(variant)
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise MissingWeightsError(f"transformers/torch unavailable: {exc}") from exc
        source = model_path or HF_MODEL_NAMES[variant]
        try:
            self._model = CLIPModel.from_pretrained(source)
            self._processor = CLIPProcessor.from_pretrained(source)
        except OSError as exc:
            raise MissingWeightsError(
                f"cannot load weights for {variant} from {source!r}: {exc}"
            ) from exc
        self._model.eval()
        self._torch = torch
        if self._model.config.projection_dim != self.dim:
            raise BackendError(
                f"loaded model has dimension {self._model.config.projection_dim}, "
                f"variant {variant} documents {self.dim}"
            )

    def embed_texts(self, texts) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), np.float32)
        inputs = self._processor(text=list(texts), return_tensors="pt",
                                 padding=True, truncation=True)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def embed_images(self, paths) -> np.ndarray:
        from PIL import Image

        if not paths:
            return np.zeros((0, self.dim), np.float32)
        images = []
        for path in paths:
            with Image.open(path) as img:
                images.append(img.convert("RGB"))
        inputs = self._processor(images=images, return_tensors="pt")
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)


def make_backend(kind: str, variant: str, model_path: str | None = None):
    if kind == "hash":
        return HashBackend(variant)
    if kind == "clip":
        return ClipBackend(variant, model_path=model_path)
    raise BackendError(f"unknown backend {kind!r}; known: clip, hash")
