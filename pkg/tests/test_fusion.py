import numpy as np
import pytest

from pointbridge.fusion import (
    FusionStrategy,
    JointQuery,
    QueryError,
    RankedItem,
    dense_ranks,
    fuse_features,
    fuse_ranks,
    fuse_scores,
    joint_query,
    rerank,
)
from pointbridge.retrieval import CorpusView, PromptSet, ensemble, top_k
from pointbridge.store import Embedding, EmbeddingStore, Modality


def make_joint_store(rng, n, d, lidar_equals_image=False):
    store = EmbeddingStore()
    for i in range(n):
        img = rng.standard_normal(d)
        lid = img if lidar_equals_image else rng.standard_normal(d)
        store.put(Embedding(f"s{i:04d}", Modality.IMAGE, img.astype(np.float32)))
        store.put(Embedding(f"s{i:04d}", Modality.LIDAR, np.asarray(lid, np.float32)))
    return store


def prompt(rng, d, name="p"):
    return PromptSet(name, rng.standard_normal((4, d)))


def cosine(a, b):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestFuseFeatures:
    def test_identical_modalities(self):
        e = np.array([1.0, 2.0, 2.0])
        np.testing.assert_allclose(fuse_features(e, e), e)
        np.testing.assert_allclose(fuse_features(e, e, normalize=True), e / 3.0)

    def test_sum_vs_mean_same_ranking(self):
        rng = np.random.default_rng(0)
        q = rng.standard_normal(8)
        for _ in range(20):
            zi, zl = rng.standard_normal(8), rng.standard_normal(8)
            mean = fuse_features(zi, zl)
            assert abs(cosine(q, zi + zl) - cosine(q, mean)) < 1e-12

    def test_matches_arithmetic_oracle(self):
        rng = np.random.default_rng(1)
        zi, zl = rng.standard_normal(6), rng.standard_normal(6)
        np.testing.assert_allclose(fuse_features(zi, zl), (zi + zl) / 2.0, atol=1e-12)
        ni, nl = zi / np.linalg.norm(zi), zl / np.linalg.norm(zl)
        np.testing.assert_allclose(
            fuse_features(zi, zl, normalize=True), (ni + nl) / 2.0, atol=1e-12
        )


class TestFuseScores:
    def test_values(self):
        assert fuse_scores(0.0, 0.0) == 0.0
        assert fuse_scores(1.0, 1.0) == 2.0

    def test_sum_ranking_equals_mean_ranking(self):
        rng = np.random.default_rng(2)
        pairs = {f"s{i}": (rng.uniform(-1, 1), rng.uniform(-1, 1)) for i in range(50)}
        by_sum = sorted(pairs, key=lambda id: (-fuse_scores(*pairs[id]), id))
        by_mean = sorted(pairs, key=lambda id: (-(pairs[id][0] + pairs[id][1]) / 2.0, id))
        assert by_sum == by_mean


class TestFuseRanks:
    def test_agreement_passthrough(self):
        ranks = {"a": 1, "b": 2, "c": 3}
        out = fuse_ranks(ranks, ranks)
        assert [id for id, _ in out] == ["a", "b", "c"]

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        scores_i = {f"s{i}": rng.uniform(-1, 1) for i in range(30)}
        scores_l = {f"s{i}": rng.uniform(-1, 1) for i in range(30)}
        base = fuse_ranks(dense_ranks(scores_i), dense_ranks(scores_l))
        warped_i = {id: np.tanh(3.0 * s) for id, s in scores_i.items()}
        warped_l = {id: np.exp(s) for id, s in scores_l.items()}
        warped = fuse_ranks(dense_ranks(warped_i), dense_ranks(warped_l))
        assert [id for id, _ in base] == [id for id, _ in warped]

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(4)
        ids = [f"s{i:02d}" for i in range(50)]
        scores_i = {id: float(rng.choice([0.1, 0.5, 0.9])) for id in ids}
        scores_l = {id: float(rng.uniform(-1, 1)) for id in ids}

        def oracle_dense(scores):
            out = {}
            for id, s in scores.items():
                out[id] = 1 + sum(1 for other in set(scores.values()) if other > s)
            return out

        ri, rl = oracle_dense(scores_i), oracle_dense(scores_l)
        expected = sorted(ids, key=lambda id: ((ri[id] + rl[id]) / 2.0, id))
        got = fuse_ranks(dense_ranks(scores_i), dense_ranks(scores_l))
        assert [id for id, _ in got] == expected

    def test_id_set_mismatch(self):
        with pytest.raises(QueryError):
            fuse_ranks({"a": 1}, {"b": 1})

    def test_dense_ranks_share_min(self):
        assert dense_ranks({"a": 0.9, "b": 0.9, "c": 0.1}) == {"a": 1, "b": 1, "c": 2}


class TestRerank:
    def test_full_candidate_set_equals_second_modality(self):
        rng = np.random.default_rng(5)
        store = make_joint_store(rng, 30, 8)
        q1, q2 = rng.standard_normal(8), rng.standard_normal(8)
        out = rerank(Modality.IMAGE, q1, q2, store, candidate_k=30, k=10)
        lidar_view = CorpusView.from_store(store, Modality.LIDAR)
        expected = top_k(q2, lidar_view, 10)
        assert [s.id for s in out] == [s.id for s in expected]

    def test_single_candidate_passthrough(self):
        rng = np.random.default_rng(6)
        store = make_joint_store(rng, 20, 8)
        q1, q2 = rng.standard_normal(8), rng.standard_normal(8)
        image_view = CorpusView.from_store(store, Modality.IMAGE)
        first_hit = top_k(q1, image_view, 1)[0]
        out = rerank(Modality.IMAGE, q1, q2, store, candidate_k=1, k=1)
        assert [s.id for s in out] == [first_hit.id]

    def test_matches_two_phase_oracle(self):
        rng = np.random.default_rng(7)
        store = make_joint_store(rng, 60, 8)
        for first in (Modality.IMAGE, Modality.LIDAR):
            second = Modality.LIDAR if first is Modality.IMAGE else Modality.IMAGE
            q1, q2 = rng.standard_normal(8), rng.standard_normal(8)
            first_items = store.modality_items(first)
            phase1 = sorted(
                ((id, cosine(q1, vec)) for id, vec in first_items),
                key=lambda t: (-t[1], t[0]),
            )[:25]
            keep = {id for id, _ in phase1}
            second_items = [(id, vec) for id, vec in store.modality_items(second) if id in keep]
            phase2 = sorted(
                ((id, cosine(q2, vec)) for id, vec in second_items),
                key=lambda t: (-t[1], t[0]),
            )[:10]
            out = rerank(first, q1, q2, store, candidate_k=25, k=10)
            assert [s.id for s in out] == [id for id, _ in phase2]

    def test_candidate_k_below_k_rejected(self):
        rng = np.random.default_rng(8)
        store = make_joint_store(rng, 10, 4)
        with pytest.raises(QueryError):
            rerank(Modality.IMAGE, np.ones(4), np.ones(4), store, candidate_k=2, k=5)


class TestJointQuery:
    def test_image_only_reduces_to_top_k(self):
        rng = np.random.default_rng(9)
        store = make_joint_store(rng, 40, 8)
        p = prompt(rng, 8)
        out = joint_query(JointQuery(FusionStrategy.IMAGE_ONLY, k=10, image_prompts=p), store)
        expected = top_k(ensemble(p), CorpusView.from_store(store, Modality.IMAGE), 10)
        assert [r.id for r in out] == [s.id for s in expected]
        assert all(r.s_lidar is None for r in out)

    def test_mean_feature_with_duplicated_modality_matches_image_only(self):
        rng = np.random.default_rng(10)
        store = make_joint_store(rng, 40, 8, lidar_equals_image=True)
        p = prompt(rng, 8)
        fused = joint_query(JointQuery(FusionStrategy.MEAN_FEATURE, k=40, image_prompts=p), store)
        single = joint_query(JointQuery(FusionStrategy.IMAGE_ONLY, k=40, image_prompts=p), store)
        assert [r.id for r in fused] == [r.id for r in single]

    def test_missing_prompts_rejected(self):
        rng = np.random.default_rng(11)
        store = make_joint_store(rng, 10, 4)
        with pytest.raises(QueryError):
            joint_query(JointQuery(FusionStrategy.MEAN_SCORE, k=5, image_prompts=prompt(rng, 4)), store)

    def test_all_strategies_return_k_unique(self):
        rng = np.random.default_rng(12)
        store = make_joint_store(rng, 50, 8)
        pi, pl = prompt(rng, 8, "pi"), prompt(rng, 8, "pl")
        for strategy in FusionStrategy:
            out = joint_query(
                JointQuery(strategy, k=20, image_prompts=pi, lidar_prompts=pl, candidate_k=30),
                store,
            )
            ids = [r.id for r in out]
            assert len(ids) == 20
            assert len(set(ids)) == 20
            assert [r.rank for r in out] == list(range(1, 21))

    def test_scaling_invariance_all_strategies(self):
        # Score/rank-based strategies tolerate independent per-modality scaling;
        # raw feature fusion only tolerates a common scale (the normalized
        # variant restores per-modality invariance).
        rng = np.random.default_rng(13)
        store = make_joint_store(rng, 30, 8)
        per_modality = EmbeddingStore()
        common = EmbeddingStore()
        for id, modality, vec in store.items():
            factor = 5.0 if modality is Modality.IMAGE else 0.25
            per_modality.put(Embedding(id, modality, (factor * vec).astype(np.float32)))
            common.put(Embedding(id, modality, (2.0 * vec).astype(np.float32)))
        pi, pl = prompt(rng, 8, "pi"), prompt(rng, 8, "pl")
        for strategy in FusionStrategy:
            scaled = common if strategy is FusionStrategy.MEAN_FEATURE else per_modality
            base = joint_query(
                JointQuery(strategy, k=30, image_prompts=pi, lidar_prompts=pl, candidate_k=30),
                store,
            )
            warped = joint_query(
                JointQuery(strategy, k=30, image_prompts=pi, lidar_prompts=pl, candidate_k=30),
                scaled,
            )
            assert [r.id for r in base] == [r.id for r in warped], strategy

    def test_rerank_reports_both_stage_scores(self):
        rng = np.random.default_rng(14)
        store = make_joint_store(rng, 20, 8)
        pi, pl = prompt(rng, 8, "pi"), prompt(rng, 8, "pl")
        out = joint_query(
            JointQuery(FusionStrategy.RERANK_IMAGE_FIRST, k=5, image_prompts=pi,
                       lidar_prompts=pl, candidate_k=10),
            store,
        )
        for r in out:
            assert r.s_image is not None and r.s_lidar is not None
            assert r.fused_score == r.s_lidar
