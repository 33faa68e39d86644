"""Command-line entry point: ingestion, training, embedding, querying,
evaluation, and serving.

stdout carries machine-readable JSON; diagnostics go to stderr. Exit codes:
0 success, 1 usage error, 2 data/format error, 3 numeric error. Every run
accepts --seed and is reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import distill, encoder, evalharness, fusion, geometry, retrieval, store as store_mod

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DATA_ERRORS = (
    store_mod.StoreError,
    geometry.GeometryError,
    encoder.CheckpointError,
    encoder.EmptyInputError,
    evalharness.EvalError,
    fusion.QueryError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    json.JSONDecodeError,
)

NUMERIC_ERRORS = (
    encoder.NumericError,
    distill.NumericTrainError,
    retrieval.DegenerateEmbeddingError,
    retrieval.DegenerateEnsembleError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pointbridge",
                     description="Cross-modal point-cloud retrieval toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest-cloud", help="frustum-filter a raw cloud against a camera")
    p.add_argument("--cloud", required=True, help="input point cloud (.lcpc)")
    p.add_argument("--calib", required=True, help="camera calibration JSON")
    p.add_argument("--out", required=True, help="output camera-frame cloud (.lcpc)")
    p.add_argument("--max-intensity", type=float, default=1.0,
                   help="raw reflectance value that maps to 1.0")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ingest-embeddings", help="merge embedding stores")
    p.add_argument("--into", required=True, help="output store (.lceb); merged if present")
    p.add_argument("--from", dest="sources", nargs="+", required=True,
                   help="input stores (.lceb)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="distill image-embedding targets into the encoder")
    p.add_argument("--clouds", required=True, help="directory of <sample id>.lcpc clouds")
    p.add_argument("--targets", required=True, help="store with image-modality targets")
    p.add_argument("--encoder-config", required=True, help="encoder config JSON")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--loss", choices=["mse", "cosine"], default="mse")
    p.add_argument("--base-lr", type=float, default=1e-5)
    p.add_argument("--max-lr", type=float, default=1e-3)
    p.add_argument("--out", required=True, help="output checkpoint (.lcwt)")
    p.add_argument("--log", help="JSONL training log path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("embed", help="encode clouds into an embedding store")
    p.add_argument("--checkpoint", required=True, help="encoder checkpoint (.lcwt)")
    p.add_argument("--clouds", required=True, help="directory of <sample id>.lcpc clouds")
    p.add_argument("--out", required=True, help="output store (.lceb)")
    p.add_argument("--modality", choices=["lidar", "image"], default="lidar")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("query", help="retrieve the best-matching samples")
    p.add_argument("--store", required=True, help="embedding store (.lceb)")
    p.add_argument("--strategy", choices=[s.value for s in fusion.FusionStrategy])
    p.add_argument("--modality", choices=["image", "lidar"],
                   help="shorthand for the single-modality strategy")
    p.add_argument("--prompt-label", help="prompt label for both modalities")
    p.add_argument("--image-prompt", help="prompt label for the image side")
    p.add_argument("--lidar-prompt", help="prompt label for the lidar side")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--candidate-k", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="P@K ablation over fusion strategies")
    p.add_argument("--synthetic",
                   help="seed=INT,n=INT,concepts=INT,noise=FLOAT[,complementary]")
    p.add_argument("--store", help="embedding store (.lceb) for real corpora")
    p.add_argument("--annotations", help="annotation JSONL for real corpora")
    p.add_argument("--labels", help="comma-separated labels (default: all)")
    p.add_argument("--methods", default="image_only,lidar_only,mean_feature",
                   help="comma-separated fusion strategies")
    p.add_argument("--ks", default="1,10,100", help="comma-separated K values")
    p.add_argument("--candidate-k", type=int, default=100)
    p.add_argument("--table", action="store_true", help="render an aligned text table")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--store", required=True, help="embedding store (.lceb)")
    p.add_argument("--clouds", help="directory of <sample id>.lcpc clouds")
    p.add_argument("--annotations", help="annotation JSONL")
    p.add_argument("--prompts", help="prompt table JSON {label: [templates]}")
    p.add_argument("--embedder-url", help="remote text embedder base URL")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _load_cloud_dir(path):
    root = Path(path)
    if not root.is_dir():
        raise NotADirectoryError(f"{path} is not a directory")
    files = sorted(root.glob("*.lcpc"))
    if not files:
        raise FileNotFoundError(f"no .lcpc files in {path}")
    return [(f.stem, geometry.read_cloud_file(f, frame=geometry.Frame.CAMERA)) for f in files]


def prompt_set_from_store(st, label):
    """Collect prompt:<label>:<i> text embeddings into a prompt set."""
    vectors = []
    i = 0
    while True:
        e = st.get(f"prompt:{label}:{i}", store_mod.Modality.TEXT)
        if e is None:
            break
        vectors.append(e.vector.astype(np.float64))
        i += 1
    if not vectors:
        raise store_mod.StoreError(f"store has no prompt embeddings for label {label!r}")
    return retrieval.PromptSet(label, np.stack(vectors))


def cmd_ingest_cloud(args) -> int:
    cloud = geometry.read_cloud_file(args.cloud, max_intensity=args.max_intensity)
    calib = geometry.read_calibration(args.calib)
    kept = geometry.frustum_filter(cloud, calib)
    geometry.write_cloud_file(kept, args.out)
    _emit({"points_in": len(cloud), "points_kept": len(kept), "out": str(args.out)})
    return EXIT_OK


def cmd_ingest_embeddings(args) -> int:
    merged = store_mod.EmbeddingStore()
    if Path(args.into).exists():
        merged = store_mod.read_store_file(args.into)
    for src in args.sources:
        merged.merge(store_mod.read_store_file(src))
    store_mod.write_store_file(merged, args.into)
    _emit({"count": len(merged), "dimension": merged.d, "out": str(args.into)})
    return EXIT_OK


def _pairs_from_dirs(args, enc_cfg):
    targets = store_mod.read_store_file(args.targets)
    pairs = []
    for sample_id, cloud in _load_cloud_dir(args.clouds):
        target = targets.get(sample_id, store_mod.Modality.IMAGE)
        if target is None:
            raise store_mod.StoreError(f"no image target for sample {sample_id!r}")
        grid = encoder.voxelize(cloud, enc_cfg)
        pairs.append((grid, target.vector.astype(np.float64)))
    return pairs


def cmd_train(args) -> int:
    enc_cfg = encoder.EncoderConfig.from_json(Path(args.encoder_config).read_text())
    pairs = _pairs_from_dirs(args, enc_cfg)
    batches = distill.make_batches(pairs, args.batch_size)
    cfg = distill.TrainConfig(
        total_steps=args.steps,
        batch_size=args.batch_size,
        loss_kind=args.loss,
        base_lr=args.base_lr,
        max_lr=args.max_lr,
        seed=args.seed,
    )
    params = encoder.EncoderParams.init_random(enc_cfg, seed=args.seed)
    trained, history = distill.train(batches, params, enc_cfg, cfg, log_path=args.log)
    encoder.save_checkpoint(args.out, trained, enc_cfg)
    _emit({
        "steps": len(history),
        "initial_loss": history[0].loss if history else None,
        "final_loss": history[-1].loss if history else None,
        "checkpoint": str(args.out),
        "log": str(args.log) if args.log else None,
    })
    return EXIT_OK


def cmd_embed(args) -> int:
    params, enc_cfg = encoder.load_checkpoint(args.checkpoint)
    out = store_mod.EmbeddingStore()
    modality = store_mod.Modality(args.modality)
    for sample_id, cloud in _load_cloud_dir(args.clouds):
        grid = encoder.voxelize(cloud, enc_cfg)
        z = encoder.encode(grid, params, enc_cfg)
        out.put(store_mod.Embedding(sample_id, modality, z.astype(np.float32)))
    store_mod.write_store_file(out, args.out)
    _emit({"count": len(out), "dimension": out.d, "out": str(args.out)})
    return EXIT_OK


def cmd_query(args) -> int:
    if (args.strategy is None) == (args.modality is None):
        raise UsageError("pass exactly one of --strategy or --modality")
    strategy = fusion.FusionStrategy(
        args.strategy if args.strategy else f"{args.modality}_only"
    )
    st = store_mod.read_store_file(args.store)

    image_label = args.image_prompt or args.prompt_label
    lidar_label = args.lidar_prompt or args.prompt_label
    image_prompts = prompt_set_from_store(st, image_label) if image_label else None
    lidar_prompts = prompt_set_from_store(st, lidar_label) if lidar_label else None
    query = fusion.JointQuery(
        strategy,
        k=args.k,
        image_prompts=image_prompts,
        lidar_prompts=lidar_prompts,
        candidate_k=max(args.candidate_k, args.k),
    )
    results = fusion.joint_query(query, st)
    _emit({
        "results": [
            {
                "id": r.id,
                "fused_score": r.fused_score,
                "rank": r.rank,
                **({"s_image": r.s_image} if r.s_image is not None else {}),
                **({"s_lidar": r.s_lidar} if r.s_lidar is not None else {}),
            }
            for r in results
        ]
    })
    return EXIT_OK


def _parse_synthetic(spec: str) -> dict:
    out = {"complementary": False}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if part == "complementary":
            out["complementary"] = True
            continue
        if "=" not in part:
            raise UsageError(f"bad --synthetic fragment {part!r}")
        key, value = part.split("=", 1)
        if key == "seed":
            out["seed"] = int(value)
        elif key == "n":
            out["n_samples"] = int(value)
        elif key == "concepts":
            out["n_concepts"] = int(value)
        elif key == "noise":
            out["noise"] = float(value)
        else:
            raise UsageError(f"unknown --synthetic key {key!r}")
    missing = {"seed", "n_samples", "n_concepts", "noise"} - set(out)
    if missing:
        raise UsageError(f"--synthetic missing keys: {sorted(missing)}")
    return out


def cmd_eval(args) -> int:
    methods = [fusion.FusionStrategy(m.strip()) for m in args.methods.split(",") if m.strip()]
    ks = [int(k) for k in args.ks.split(",") if k.strip()]
    labels = [l.strip() for l in args.labels.split(",")] if args.labels else None

    if bool(args.synthetic) == bool(args.store):
        raise UsageError("pass exactly one of --synthetic or --store")

    if args.synthetic:
        params = _parse_synthetic(args.synthetic)
        corpus = evalharness.generate_synthetic_corpus(**params)
        st, gt, prompt_sets = corpus.store, corpus.ground_truth, corpus.prompt_sets
        digest_fields = {"synthetic": params}
    else:
        if not args.annotations:
            raise UsageError("--store requires --annotations for ground truth")
        st = store_mod.read_store_file(args.store)
        gt = evalharness.build_ground_truth(evalharness.read_annotations(args.annotations))
        wanted = labels if labels else gt.labels()
        prompt_sets = {label: prompt_set_from_store(st, label) for label in wanted}
        digest_fields = {"store": str(args.store)}

    report = evalharness.run_ablation(
        st, gt, prompt_sets, methods, ks,
        labels=labels, candidate_k=args.candidate_k,
        extra_digest_fields=digest_fields,
    )
    if args.table:
        sys.stdout.write(report.render_table() + "\n")
    else:
        sys.stdout.write(report.to_json() + "\n")
    return EXIT_OK


def cmd_serve(args) -> int:
    from . import service

    st = store_mod.read_store_file(args.store)
    clouds = {}
    if args.clouds:
        clouds = dict(_load_cloud_dir(args.clouds))
    annotations = {}
    if args.annotations:
        annotations = {
            a.sample_id: a for a in evalharness.read_annotations(args.annotations)
        }
    prompt_table = {}
    if args.prompts:
        prompt_table = json.loads(Path(args.prompts).read_text())
    embedder = None
    if args.embedder_url:
        embedder = service.RemoteTextEmbedder(args.embedder_url)
    app = service.create_app(
        store=st,
        embedder=embedder,
        clouds=clouds,
        annotations=annotations,
        prompt_table=prompt_table,
    )
    print(f"serving on http://{args.host}:{args.port}", file=sys.stderr)
    service.serve(app, host=args.host, port=args.port)
    return EXIT_OK


COMMANDS = {
    "ingest-cloud": cmd_ingest_cloud,
    "ingest-embeddings": cmd_ingest_embeddings,
    "train": cmd_train,
    "embed": cmd_embed,
    "query": cmd_query,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
