import io
import json
import sys

import numpy as np
import pytest

from pointbridge.cli import dispatch
from pointbridge.distill import TrainConfig
from pointbridge.encoder import EncoderConfig
from pointbridge.evalharness import MetricReport, concept_label, generate_synthetic_corpus
from pointbridge.fusion import FusionStrategy, JointQuery, joint_query
from pointbridge.geometry import (
    CameraCalibration,
    Frame,
    PointCloud,
    frustum_filter,
    read_cloud_file,
    write_calibration,
    write_cloud_file,
)
from pointbridge.store import Modality, read_store_file, write_store_file

TRAIN_ENC = EncoderConfig(
    voxel_size=(1.0, 1.0, 1.0),
    window_shape=(2, 2, 2),
    pc_range=(0.0, 0.0, 0.0, 4.0, 4.0, 4.0),
    num_layers=1,
    d_model=8,
    d_ff=16,
    pool_heads=2,
    d_out=16,
)


def run_cli(capsys, *argv):
    code = dispatch(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestUsage:
    def test_unknown_subcommand_exit_1(self, capsys):
        code, _, err = run_cli(capsys, "explode")
        assert code == 1
        assert "usage" in err.lower()

    def test_no_subcommand_exit_1(self, capsys):
        code, _, err = run_cli(capsys)
        assert code == 1

    def test_query_requires_strategy_xor_modality(self, capsys, tmp_path):
        store_path = tmp_path / "s.lceb"
        corpus = generate_synthetic_corpus(0, 8, 2, 0.1)
        write_store_file(corpus.store, store_path)
        code, _, err = run_cli(capsys, "query", "--store", str(store_path), "--k", "3")
        assert code == 1


class TestIngestCloud:
    def test_happy_path(self, capsys, tmp_path):
        rng = np.random.default_rng(0)
        pts = np.empty((50, 4))
        pts[:, :3] = rng.uniform(-5, 5, (50, 3))
        pts[:, 3] = rng.uniform(0, 1, 50)
        cloud_path = tmp_path / "raw.lcpc"
        write_cloud_file(PointCloud(pts, Frame.LIDAR), cloud_path)
        calib = CameraCalibration(
            np.eye(4),
            np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1.0]]),
            100, 100,
        )
        calib_path = tmp_path / "calib.json"
        write_calibration(calib, calib_path)
        out_path = tmp_path / "cam.lcpc"
        code, out, _ = run_cli(capsys, "ingest-cloud", "--cloud", str(cloud_path),
                               "--calib", str(calib_path), "--out", str(out_path))
        assert code == 0
        doc = json.loads(out)
        assert doc["points_in"] == 50
        expected = frustum_filter(PointCloud(pts, Frame.LIDAR), calib)
        got = read_cloud_file(out_path, frame=Frame.CAMERA)
        assert doc["points_kept"] == len(expected) == len(got)

    def test_missing_file_exit_2(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "ingest-cloud", "--cloud", str(tmp_path / "no.lcpc"),
                               "--calib", str(tmp_path / "no.json"), "--out", str(tmp_path / "o"))
        assert code == 2
        assert "error" in err


class TestIngestEmbeddings:
    def test_merge(self, capsys, tmp_path):
        a = generate_synthetic_corpus(0, 4, 2, 0.1)
        b = generate_synthetic_corpus(1, 4, 2, 0.1)
        pa, pb = tmp_path / "a.lceb", tmp_path / "b.lceb"
        write_store_file(a.store, pa)
        write_store_file(b.store, pb)
        out = tmp_path / "merged.lceb"
        code, stdout, _ = run_cli(capsys, "ingest-embeddings", "--into", str(out),
                                  "--from", str(pa), str(pb))
        assert code == 0
        merged = read_store_file(out)
        assert set(merged.keys()) == set(a.store.keys()) | set(b.store.keys())

    def test_corrupt_store_exit_2(self, capsys, tmp_path):
        bad = tmp_path / "bad.lceb"
        bad.write_bytes(b"XXXX")
        code, _, _ = run_cli(capsys, "ingest-embeddings", "--into", str(tmp_path / "o.lceb"),
                             "--from", str(bad))
        assert code == 2


def write_training_fixture(tmp_path, n=8, seed=0):
    """Clouds dir + image-target store + encoder config json."""
    from pointbridge.store import Embedding, EmbeddingStore

    rng = np.random.default_rng(seed)
    clouds_dir = tmp_path / "clouds"
    clouds_dir.mkdir(exist_ok=True)
    targets = EmbeddingStore()
    for i in range(n):
        sid = f"pair-{i:03d}"
        pts = np.empty((24, 4))
        pts[:, :3] = rng.uniform(0.0, 4.0 - 1e-9, (24, 3))
        pts[:, 3] = rng.uniform(0, 1, 24)
        write_cloud_file(PointCloud(pts, Frame.CAMERA), clouds_dir / f"{sid}.lcpc")
        targets.put(Embedding(sid, Modality.IMAGE,
                              rng.standard_normal(TRAIN_ENC.d_out).astype(np.float32)))
    targets_path = tmp_path / "targets.lceb"
    write_store_file(targets, targets_path)
    cfg_path = tmp_path / "enc.json"
    cfg_path.write_text(TRAIN_ENC.to_json())
    return clouds_dir, targets_path, cfg_path


class TestTrainEmbed:
    def test_train_embed_round_trip_and_determinism(self, capsys, tmp_path):
        clouds_dir, targets_path, cfg_path = write_training_fixture(tmp_path)

        def train_once(tag):
            ckpt = tmp_path / f"ckpt-{tag}.lcwt"
            log = tmp_path / f"log-{tag}.jsonl"
            code, out, _ = run_cli(capsys, "train",
                                   "--clouds", str(clouds_dir),
                                   "--targets", str(targets_path),
                                   "--encoder-config", str(cfg_path),
                                   "--steps", "40", "--batch-size", "4",
                                   "--max-lr", "1e-2",
                                   "--out", str(ckpt), "--log", str(log),
                                   "--seed", "5")
            assert code == 0, out
            return json.loads(out), ckpt.read_bytes(), log.read_text()

        doc1, ckpt1, log1 = train_once("a")
        doc2, ckpt2, log2 = train_once("b")
        assert doc1["final_loss"] == doc2["final_loss"]
        assert ckpt1 == ckpt2
        assert log1 == log2
        assert doc1["final_loss"] < doc1["initial_loss"]

        ckpt = tmp_path / "ckpt-a.lcwt"
        out_store = tmp_path / "lidar.lceb"
        code, out, _ = run_cli(capsys, "embed", "--checkpoint", str(ckpt),
                               "--clouds", str(clouds_dir), "--out", str(out_store))
        assert code == 0
        st = read_store_file(out_store)
        assert len(st) == 8
        assert st.d == TRAIN_ENC.d_out
        assert st.ids(Modality.LIDAR) == sorted(f"pair-{i:03d}" for i in range(8))


class TestQuery:
    def make_store(self, tmp_path, seed=3):
        corpus = generate_synthetic_corpus(seed, 32, 4, 0.4, complementary=True)
        path = tmp_path / "s.lceb"
        write_store_file(corpus.store, path)
        return corpus, path

    def test_happy_path_json(self, capsys, tmp_path):
        # Parity oracle uses the same data path as the CLI: prompt vectors as
        # stored (f32), not the pre-quantization generator values.
        from pointbridge.cli import prompt_set_from_store

        corpus, path = self.make_store(tmp_path)
        label = concept_label(0)
        code, out, _ = run_cli(capsys, "query", "--store", str(path),
                               "--modality", "lidar", "--prompt-label", label,
                               "--k", "10")
        assert code == 0
        doc = json.loads(out)
        assert len(doc["results"]) == 10
        loaded = read_store_file(path)
        expected = joint_query(
            JointQuery(FusionStrategy.LIDAR_ONLY, k=10,
                       lidar_prompts=prompt_set_from_store(loaded, label)),
            loaded,
        )
        assert [r["id"] for r in doc["results"]] == [r.id for r in expected]
        assert [r["fused_score"] for r in doc["results"]] == [r.fused_score for r in expected]

    def test_dual_prompt_strategy(self, capsys, tmp_path):
        corpus, path = self.make_store(tmp_path)
        code, out, _ = run_cli(capsys, "query", "--store", str(path),
                               "--strategy", "rerank_lidar_first",
                               "--lidar-prompt", concept_label(0),
                               "--image-prompt", concept_label(1),
                               "--k", "5", "--candidate-k", "20")
        assert code == 0
        doc = json.loads(out)
        expected = joint_query(
            JointQuery(FusionStrategy.RERANK_LIDAR_FIRST, k=5,
                       image_prompts=corpus.prompt_sets[concept_label(1)],
                       lidar_prompts=corpus.prompt_sets[concept_label(0)],
                       candidate_k=20),
            corpus.store,
        )
        assert [r["id"] for r in doc["results"]] == [r.id for r in expected]

    def test_unknown_prompt_label_exit_2(self, capsys, tmp_path):
        _, path = self.make_store(tmp_path)
        code, _, _ = run_cli(capsys, "query", "--store", str(path),
                             "--modality", "lidar", "--prompt-label", "ghost")
        assert code == 2


class TestEval:
    def test_synthetic_json_report(self, capsys):
        code, out, _ = run_cli(capsys, "eval",
                               "--synthetic", "seed=2,n=64,concepts=4,noise=0.5,complementary",
                               "--methods", "image_only,lidar_only,mean_feature",
                               "--ks", "1,10")
        assert code == 0
        report = MetricReport.from_json(out)
        assert report.corpus_size == 64
        assert len(report.rows) == 4 * 3 * 2

    def test_table_rendering(self, capsys):
        code, out, _ = run_cli(capsys, "eval",
                               "--synthetic", "seed=2,n=32,concepts=2,noise=0.3",
                               "--methods", "lidar_only", "--ks", "10", "--table")
        assert code == 0
        assert "lidar_only" in out
        assert "P@10" in out

    def test_digest_stable_across_runs(self, capsys):
        args = ("eval", "--synthetic", "seed=4,n=32,concepts=2,noise=0.3",
                "--methods", "mean_score", "--ks", "10")
        code1, out1, _ = run_cli(capsys, *args)
        code2, out2, _ = run_cli(capsys, *args)
        assert code1 == code2 == 0
        assert out1 == out2

    def test_bad_synthetic_spec_exit_1(self, capsys):
        code, _, _ = run_cli(capsys, "eval", "--synthetic", "seed=1")
        assert code == 1

    def test_synthetic_xor_store(self, capsys):
        code, _, _ = run_cli(capsys, "eval")
        assert code == 1
