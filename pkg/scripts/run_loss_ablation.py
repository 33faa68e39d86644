#!/usr/bin/env python3
"""Training-loss ablation: distill one encoder per loss kind on synthetic
cloud/embedding pairs from the same initialization, then compare lidar-only
retrieval precision.
"""

import argparse
import sys
import time

from pointbridge.evalharness import loss_ablation


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--n", type=int, default=256)
    parser.add_argument("--concepts", type=int, default=8)
    parser.add_argument("--noise", type=float, default=0.5)
    parser.add_argument("--steps", type=int, default=960)
    parser.add_argument("--k", type=int, default=10)
    args = parser.parse_args()

    t0 = time.time()
    result = loss_ablation(
        seed=args.seed, n_samples=args.n, n_concepts=args.concepts,
        noise=args.noise, total_steps=args.steps, k=args.k,
    )
    print(f"{'loss':8s}  mean P@{args.k}")
    for kind in ("mse", "cosine"):
        print(f"{kind:8s}  {result[kind]:.4f}")
    direction = "mse >= cosine" if result["mse"] >= result["cosine"] else "cosine > mse"
    print(f"\ndirection: {direction}  ({time.time() - t0:.0f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
