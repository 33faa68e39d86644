"""Joint image+lidar retrieval: feature fusion, score fusion, rank fusion,
and two-step reranking, with optional per-modality query prompts.

Strategy names are the canonical strings shared by the CLI, the HTTP API,
and evaluation reports. Joint strategies operate on the ids that carry both
an image and a lidar embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .retrieval import (
    NORM_EPS,
    CorpusView,
    DegenerateEmbeddingError,
    PromptSet,
    RetrievalError,
    ensemble,
    top_k,
)
from .store import EmbeddingStore, Modality


class FusionStrategy(str, Enum):
    IMAGE_ONLY = "image_only"
    LIDAR_ONLY = "lidar_only"
    MEAN_FEATURE = "mean_feature"
    MEAN_NORM_FEATURE = "mean_norm_feature"
    MEAN_SCORE = "mean_score"
    MEAN_RANK = "mean_rank"
    RERANK_IMAGE_FIRST = "rerank_image_first"
    RERANK_LIDAR_FIRST = "rerank_lidar_first"


RERANK_STRATEGIES = {FusionStrategy.RERANK_IMAGE_FIRST, FusionStrategy.RERANK_LIDAR_FIRST}
DEFAULT_CANDIDATE_K = 100


class QueryError(ValueError):
    pass


@dataclass
class JointQuery:
    strategy: FusionStrategy
    k: int
    image_prompts: PromptSet | None = None
    lidar_prompts: PromptSet | None = None
    candidate_k: int = DEFAULT_CANDIDATE_K

    def __post_init__(self):
        self.strategy = FusionStrategy(self.strategy)
        if self.k < 1:
            raise QueryError(f"k must be >= 1, got {self.k}")
        if self.strategy in RERANK_STRATEGIES and self.candidate_k < self.k:
            raise QueryError(
                f"candidate_k ({self.candidate_k}) must be >= k ({self.k}) for reranking"
            )


@dataclass(frozen=True)
class RankedItem:
    """One joint-retrieval result row with its per-modality evidence.

    For rank-based strategies fused_score is the mean rank (lower is better);
    for every other strategy higher is better. The list order is authoritative.
    """

    id: str
    fused_score: float
    rank: int
    s_image: float | None = None
    s_lidar: float | None = None


def fuse_features(z_image: np.ndarray, z_lidar: np.ndarray, normalize: bool = False) -> np.ndarray:
    """Average the two modality embeddings, optionally unit-normalizing first."""
    a = np.asarray(z_image, dtype=np.float64).reshape(-1)
    b = np.asarray(z_lidar, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise RetrievalError(f"dimension mismatch: {a.size} vs {b.size}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise RetrievalError("fused embeddings must be finite")
    if normalize:
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na < NORM_EPS or nb < NORM_EPS:
            raise DegenerateEmbeddingError("cannot normalize a near-zero embedding")
        a = a / na
        b = b / nb
    return (a + b) / 2.0


def fuse_scores(s_image: float, s_lidar: float) -> float:
    """Sum of the per-modality cosine scores."""
    if not (np.isfinite(s_image) and np.isfinite(s_lidar)):
        raise RetrievalError("scores must be finite")
    return float(s_image) + float(s_lidar)


def dense_ranks(scores: dict) -> dict:
    """Dense rank per id: 1 = best score, ties share the same rank, no gaps."""
    distinct = sorted(set(scores.values()), reverse=True)
    rank_of = {s: r + 1 for r, s in enumerate(distinct)}
    return {id: rank_of[s] for id, s in scores.items()}


def fuse_ranks(rank_image: dict, rank_lidar: dict) -> list:
    """Order ids by mean per-modality rank ascending, ties by ascending id.

    Returns (id, mean_rank) pairs. Both rank maps must cover the same ids.
    """
    if set(rank_image) != set(rank_lidar):
        raise QueryError("rank maps must cover the same id set")
    fused = [(id, (rank_image[id] + rank_lidar[id]) / 2.0) for id in rank_image]
    fused.sort(key=lambda t: (t[1], t[0]))
    return fused


def rerank(
    first: Modality,
    q_first: np.ndarray,
    q_second: np.ndarray,
    store: EmbeddingStore,
    candidate_k: int,
    k: int,
) -> list:
    """Two-step retrieval: candidate_k ids by the first modality's score, then
    those candidates re-ordered by the second modality's score; top k returned.
    """
    if candidate_k < k:
        raise QueryError(f"candidate_k ({candidate_k}) must be >= k ({k})")
    first = Modality(first)
    second = Modality.LIDAR if first is Modality.IMAGE else Modality.IMAGE
    joint_ids = _joint_ids(store)
    first_view = _subset_view(store, first, joint_ids)
    candidates = top_k(q_first, first_view, candidate_k)
    candidate_ids = [s.id for s in candidates]
    second_view = _subset_view(store, second, candidate_ids)
    return top_k(q_second, second_view, k)


def _joint_ids(store: EmbeddingStore) -> list:
    image_ids = set(store.ids(Modality.IMAGE))
    lidar_ids = set(store.ids(Modality.LIDAR))
    return sorted(image_ids & lidar_ids)


def _subset_view(store: EmbeddingStore, modality: Modality, ids) -> CorpusView:
    wanted = set(ids)
    items = [(id, vec) for id, vec in store.modality_items(modality) if id in wanted]
    if items:
        matrix = np.stack([v for _, v in items]).astype(np.float64)
    else:
        matrix = np.zeros((0, store.d or 0))
    return CorpusView([id for id, _ in items], matrix)


def _resolve_queries(q: JointQuery):
    """Per-modality query embeddings from the prompt sets the strategy consumes."""
    q_image = ensemble(q.image_prompts) if q.image_prompts is not None else None
    q_lidar = ensemble(q.lidar_prompts) if q.lidar_prompts is not None else None
    strategy = q.strategy
    if strategy is FusionStrategy.IMAGE_ONLY and q_image is None:
        raise QueryError("image_only requires image prompts")
    if strategy is FusionStrategy.LIDAR_ONLY and q_lidar is None:
        raise QueryError("lidar_only requires lidar prompts")
    if strategy in {FusionStrategy.MEAN_SCORE, FusionStrategy.MEAN_RANK} | RERANK_STRATEGIES:
        if q_image is None or q_lidar is None:
            raise QueryError(f"{strategy.value} requires prompts for both modalities")
    if strategy in (FusionStrategy.MEAN_FEATURE, FusionStrategy.MEAN_NORM_FEATURE):
        if q_image is None and q_lidar is None:
            raise QueryError(f"{strategy.value} requires at least one prompt set")
    return q_image, q_lidar


def _cosine_map(view: CorpusView, query: np.ndarray) -> dict:
    raw = view.scores(query)
    return {id: float(s) for id, s in zip(view.ids, raw)}


def joint_query(q: JointQuery, store: EmbeddingStore) -> list:
    """Dispatch a joint query to its strategy; per-modality scores ride along.

    Every strategy returns exactly min(k, available corpus) items with no
    duplicate ids, ordered by the fused criterion with ties broken by id.
    """
    q_image, q_lidar = _resolve_queries(q)
    strategy = q.strategy

    if strategy is FusionStrategy.IMAGE_ONLY:
        view = CorpusView.from_store(store, Modality.IMAGE)
        hits = top_k(q_image, view, q.k)
        return [
            RankedItem(s.id, s.score, rank=i + 1, s_image=s.score)
            for i, s in enumerate(hits)
        ]
    if strategy is FusionStrategy.LIDAR_ONLY:
        view = CorpusView.from_store(store, Modality.LIDAR)
        hits = top_k(q_lidar, view, q.k)
        return [
            RankedItem(s.id, s.score, rank=i + 1, s_lidar=s.score)
            for i, s in enumerate(hits)
        ]

    joint_ids = _joint_ids(store)
    if not joint_ids:
        return []
    image_view = _subset_view(store, Modality.IMAGE, joint_ids)
    lidar_view = _subset_view(store, Modality.LIDAR, joint_ids)

    if strategy in (FusionStrategy.MEAN_FEATURE, FusionStrategy.MEAN_NORM_FEATURE):
        # A feature query is a single embedding; with dual prompts, the two
        # ensembles are averaged into one query.
        if q_image is not None and q_lidar is not None:
            query = (q_image + q_lidar) / 2.0
        else:
            query = q_image if q_image is not None else q_lidar
        normalize = strategy is FusionStrategy.MEAN_NORM_FEATURE
        fused_rows = [
            fuse_features(image_view.matrix[i], lidar_view.matrix[i], normalize=normalize)
            for i in range(len(joint_ids))
        ]
        fused_view = CorpusView(list(joint_ids), np.stack(fused_rows))
        hits = top_k(query, fused_view, q.k)
        s_img = _cosine_map(image_view, q_image if q_image is not None else query)
        s_lid = _cosine_map(lidar_view, q_lidar if q_lidar is not None else query)
        return [
            RankedItem(s.id, s.score, rank=i + 1, s_image=s_img[s.id], s_lidar=s_lid[s.id])
            for i, s in enumerate(hits)
        ]

    s_img = _cosine_map(image_view, q_image)
    s_lid = _cosine_map(lidar_view, q_lidar)

    if strategy is FusionStrategy.MEAN_SCORE:
        fused = {id: fuse_scores(s_img[id], s_lid[id]) for id in joint_ids}
        order = sorted(joint_ids, key=lambda id: (-fused[id], id))[: q.k]
        return [
            RankedItem(id, fused[id], rank=i + 1, s_image=s_img[id], s_lidar=s_lid[id])
            for i, id in enumerate(order)
        ]

    if strategy is FusionStrategy.MEAN_RANK:
        fused = fuse_ranks(dense_ranks(s_img), dense_ranks(s_lid))[: q.k]
        return [
            RankedItem(id, mean_rank, rank=i + 1, s_image=s_img[id], s_lidar=s_lid[id])
            for i, (id, mean_rank) in enumerate(fused)
        ]

    first = Modality.IMAGE if strategy is FusionStrategy.RERANK_IMAGE_FIRST else Modality.LIDAR
    q_first = q_image if first is Modality.IMAGE else q_lidar
    q_second = q_lidar if first is Modality.IMAGE else q_image
    hits = rerank(first, q_first, q_second, store, q.candidate_k, q.k)
    # The second-stage score is authoritative for its modality's field.
    if first is Modality.IMAGE:
        return [
            RankedItem(s.id, s.score, rank=i + 1, s_image=s_img[s.id], s_lidar=s.score)
            for i, s in enumerate(hits)
        ]
    return [
        RankedItem(s.id, s.score, rank=i + 1, s_image=s.score, s_lidar=s_lid[s.id])
        for i, s in enumerate(hits)
    ]
