#!/usr/bin/env python3
"""Write an SDAR refinement weights file for a given joint and feature count."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from app.decoding.sdar import SdarWeights, save_weights  # noqa: E402


def build_weights(joint_count: int, feature_channels: int, seed: int | None, scale: float) -> SdarWeights:
    if joint_count < 1 or feature_channels < 1:
        raise ValueError("joint count and feature channels must be positive.")
    if seed is None:
        return SdarWeights.zeros(joint_count, feature_channels)
    return SdarWeights.random(joint_count, feature_channels, seed, scale)


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Write zero (identity) or seeded random refinement weights."
    )
    parser.add_argument("out", type=Path, help="Destination weights file")
    parser.add_argument("--joints", type=int, default=15, help="Joint count K")
    parser.add_argument("--channels", type=int, default=8, help="Feature channels C")
    parser.add_argument("--seed", type=int, help="Seed for random weights; omit for all-zero weights")
    parser.add_argument("--scale", type=float, default=0.01, help="Standard deviation of random weights")
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    if args.out.exists():
        raise FileExistsError(f"Weights file already exists: {args.out}")
    weights = build_weights(args.joints, args.channels, args.seed, args.scale)
    save_weights(args.out, weights)
    kind = "zero" if args.seed is None else f"random (seed {args.seed})"
    print(f"Wrote {kind} weights for K={args.joints}, C={args.channels} to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
