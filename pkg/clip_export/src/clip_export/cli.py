"""clip-export command line: export prompt/image embeddings, serve /embed."""

from __future__ import annotations

import argparse
import json
import sys

from .backends import BackendError, MissingWeightsError, make_backend
from .export import (
    ExportError,
    ExportJob,
    export_images,
    export_text,
    read_image_manifest,
    read_prompt_table,
)
from .formats import FormatError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clip-export")
    parser.add_argument("--variant", default="ViT-B/32",
                        help="model variant (ViT-L/14 -> 768, ViT-B/32 -> 512)")
    parser.add_argument("--backend", default="clip", choices=["clip", "hash"],
                        help="clip = published weights; hash = deterministic dev featurizer")
    parser.add_argument("--model-path", help="local weights directory for the clip backend")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("export-text", help="embed a prompt table")
    p.add_argument("--prompts", required=True, help="JSON {label: [templates]}")
    p.add_argument("--out", required=True, help="output store (.lceb)")

    p = sub.add_parser("export-images", help="embed an image manifest")
    p.add_argument("--manifest", required=True, help='JSONL {"id", "path"}')
    p.add_argument("--out", required=True, help="output store (.lceb)")

    p = sub.add_parser("serve", help="run the /embed sidecar")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8090)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        backend = make_backend(args.backend, args.variant, model_path=args.model_path)
        if args.command == "export-text":
            job = ExportJob(args.variant, args.out)
            count = export_text(read_prompt_table(args.prompts), job, backend)
            json.dump({"count": count, "dimension": job.dim, "out": args.out}, sys.stdout)
            sys.stdout.write("\n")
        elif args.command == "export-images":
            job = ExportJob(args.variant, args.out)
            count = export_images(read_image_manifest(args.manifest), job, backend)
            json.dump({"count": count, "dimension": job.dim, "out": args.out}, sys.stdout)
            sys.stdout.write("\n")
        elif args.command == "serve":
            from .sidecar import serve

            print(f"embedding sidecar on http://{args.host}:{args.port}", file=sys.stderr)
            serve(backend, host=args.host, port=args.port)
    except MissingWeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (BackendError, ExportError, FormatError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
