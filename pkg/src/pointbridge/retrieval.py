"""Single-modality retrieval: prompt ensembling, cosine scoring, exact top-k,
and zero-shot classification.

All similarity math accumulates in float64. Ranking ties are broken by
ascending id so repeated runs over the same corpus agree bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .store import EmbeddingStore, Modality

NORM_EPS = 1e-9


class RetrievalError(ValueError):
    pass


class DegenerateEmbeddingError(RetrievalError):
    pass


class DegenerateEnsembleError(RetrievalError):
    pass


@dataclass
class PromptSet:
    """Text embeddings of several template phrasings of one concept."""

    name: str
    vectors: np.ndarray  # (n_templates, d)

    def __post_init__(self):
        vecs = np.asarray(self.vectors, dtype=np.float64)
        if vecs.ndim == 1:
            vecs = vecs[None, :]
        if vecs.ndim != 2 or vecs.shape[0] == 0:
            raise RetrievalError("prompt set needs at least one template embedding")
        if not np.isfinite(vecs).all():
            raise RetrievalError("prompt embeddings must be finite")
        self.vectors = vecs


@dataclass(frozen=True)
class ScoredSample:
    id: str
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score) or abs(self.score) > 1.0 + 1e-9:
            raise RetrievalError(f"score {self.score} outside [-1, 1]")


@dataclass
class ClassPromptSet:
    classes: list  # list[PromptSet]

    def __post_init__(self):
        if len(self.classes) < 2:
            raise RetrievalError("classification needs at least 2 classes")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise RetrievalError("class names must be distinct")

    @property
    def names(self):
        return [c.name for c in self.classes]


def ensemble(prompts: PromptSet) -> np.ndarray:
    """Mean of the unit-normalized template embeddings (not renormalized).

    Renormalizing the mean cannot change any cosine ranking, so the cheaper
    unnormalized mean is returned.
    """
    norms = np.linalg.norm(prompts.vectors, axis=1)
    if (norms < NORM_EPS).any():
        raise DegenerateEmbeddingError(f"prompt set {prompts.name!r} has a near-zero template")
    mean = (prompts.vectors / norms[:, None]).mean(axis=0)
    if np.linalg.norm(mean) < NORM_EPS:
        raise DegenerateEnsembleError(f"prompt set {prompts.name!r} templates cancel out")
    return mean


def score(z_text: np.ndarray, z: np.ndarray) -> float:
    """Cosine similarity, accumulated in float64."""
    a = np.asarray(z_text, dtype=np.float64).reshape(-1)
    b = np.asarray(z, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise RetrievalError(f"dimension mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        raise DegenerateEmbeddingError("cannot score a near-zero embedding")
    return float(a @ b / (na * nb))


@dataclass
class CorpusView:
    """Immutable snapshot of one modality of a store, ready for batch scoring."""

    ids: list
    matrix: np.ndarray  # (n, d) float64

    @classmethod
    def from_store(cls, store: EmbeddingStore, modality: Modality) -> "CorpusView":
        items = store.modality_items(modality)
        ids = [id for id, _ in items]
        if items:
            matrix = np.stack([v for _, v in items]).astype(np.float64)
        else:
            matrix = np.zeros((0, store.d or 0))
        return cls(ids, matrix)

    def __len__(self):
        return len(self.ids)

    def scores(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        nq = np.linalg.norm(q)
        if nq < NORM_EPS:
            raise DegenerateEmbeddingError("cannot score a near-zero query")
        if not len(self.ids):
            return np.zeros(0)
        norms = np.linalg.norm(self.matrix, axis=1)
        if (norms < NORM_EPS).any():
            raise DegenerateEmbeddingError("corpus contains a near-zero embedding")
        return (self.matrix @ q) / (norms * nq)


def top_k(query: np.ndarray, corpus: CorpusView, k: int) -> list:
    """Exact k highest-scoring samples, descending; ties broken by ascending id.

    k beyond the corpus size returns the full ranking; an empty corpus yields
    an empty list.
    """
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    if not len(corpus):
        return []
    raw = corpus.scores(query)
    order = sorted(range(len(corpus)), key=lambda i: (-raw[i], corpus.ids[i]))
    clipped = np.clip(raw, -1.0, 1.0)
    return [ScoredSample(corpus.ids[i], float(clipped[i])) for i in order[:k]]


def zero_shot_classify(z: np.ndarray, classes: ClassPromptSet, temperature: float = 100.0) -> np.ndarray:
    """Softmax over temperature-scaled cosine similarities to each class ensemble.

    The argmax does not depend on the temperature, only the sharpness does.
    """
    if temperature <= 0:
        raise RetrievalError("temperature must be positive")
    logits = np.array([temperature * score(ensemble(c), z) for c in classes.classes])
    logits -= logits.max()
    exp = np.exp(logits)
    return exp / exp.sum()
