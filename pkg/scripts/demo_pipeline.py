#!/usr/bin/env python3
"""End-to-end walkthrough on synthetic data: generate a corpus and point
clouds, train the encoder, embed, and run a few retrieval queries.

Writes all artifacts (clouds, stores, checkpoint, log) into --workdir so the
equivalent CLI commands can be replayed against the same files.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from pointbridge.cli import dispatch
from pointbridge.encoder import voxelize
from pointbridge.evalharness import (
    concept_label,
    desk_scale_encoder_config,
    generate_synthetic_corpus,
    synthetic_cloud,
)
from pointbridge.geometry import write_cloud_file
from pointbridge.store import EmbeddingStore, Modality, write_store_file


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo-artifacts")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n", type=int, default=64)
    parser.add_argument("--steps", type=int, default=240)
    args = parser.parse_args()

    work = Path(args.workdir)
    clouds_dir = work / "clouds"
    clouds_dir.mkdir(parents=True, exist_ok=True)
    enc_cfg = desk_scale_encoder_config()

    print(f"[1/4] generating synthetic corpus (n={args.n}) and point clouds", file=sys.stderr)
    corpus = generate_synthetic_corpus(args.seed, args.n, 8, 0.5)
    targets = EmbeddingStore()
    for i, sid in enumerate(sorted(corpus.memberships)):
        cloud = synthetic_cloud(args.seed, i, corpus.memberships[sid], 8, enc_cfg)
        write_cloud_file(cloud, clouds_dir / f"{sid}.lcpc")
        e = corpus.store.get(sid, Modality.IMAGE)
        targets.put(e)
    write_store_file(targets, work / "targets.lceb")
    write_store_file(corpus.store, work / "corpus.lceb")
    (work / "encoder.json").write_text(enc_cfg.to_json())

    print(f"[2/4] training ({args.steps} steps, mse)", file=sys.stderr)
    code = dispatch([
        "train",
        "--clouds", str(clouds_dir),
        "--targets", str(work / "targets.lceb"),
        "--encoder-config", str(work / "encoder.json"),
        "--steps", str(args.steps),
        "--max-lr", "1e-2",
        "--out", str(work / "encoder.lcwt"),
        "--log", str(work / "train.jsonl"),
        "--seed", str(args.seed),
    ])
    if code:
        return code

    print("[3/4] embedding clouds with the trained encoder", file=sys.stderr)
    code = dispatch([
        "embed",
        "--checkpoint", str(work / "encoder.lcwt"),
        "--clouds", str(clouds_dir),
        "--out", str(work / "lidar.lceb"),
    ])
    if code:
        return code

    print("[4/4] merging prompts + trained lidar embeddings and querying", file=sys.stderr)
    merged = EmbeddingStore()
    for id, modality, vec in corpus.store.items():
        if modality is not Modality.LIDAR:
            merged.put(corpus.store.get(id, modality))
    from pointbridge.store import read_store_file
    merged.merge(read_store_file(work / "lidar.lceb"))
    write_store_file(merged, work / "serving.lceb")

    for label in (concept_label(0), concept_label(3)):
        print(f"\n=== lidar-only query: {label}", file=sys.stderr)
        code = dispatch([
            "query",
            "--store", str(work / "serving.lceb"),
            "--modality", "lidar",
            "--prompt-label", label,
            "--k", "5",
        ])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
