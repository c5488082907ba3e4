#!/usr/bin/env python3
"""Overfit the toy pipeline on a few synthetic scenes and report the loss trajectory."""

import argparse
import dataclasses
import json
import sys

import torch

from bevllm.config import load_config
from bevllm.trainer import overfit_smoke


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="flat key = value overrides on the toy profile")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--metrics", help="write one JSON record per step here")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    torch.set_num_threads(args.threads)
    cfg = load_config(args.config)
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, steps=args.steps)
    result = overfit_smoke(cfg, metrics_path=args.metrics)
    if not result.trajectory:
        print(result.reason, file=sys.stderr)
        return 1
    for rec in result.trajectory[:: max(1, len(result.trajectory) // 10)]:
        print(f"step {rec['step']:4d}  total {rec['total']:8.4f}  btc {rec['btc']:.4f}  "
              f"btg {rec['btg']:.4f}  btm {rec['btm']:.4f}  caption {rec['caption']:.4f}")
    scene = result.scenes[0]
    generated = result.bundle.caption_scene(scene)
    print(json.dumps({
        "summary": result.reason,
        "caption_prefix_match": result.caption_match,
        "seconds": round(result.seconds, 2),
        "reference": scene.caption,
        "generated": generated.text,
    }, indent=2))
    return 0 if result.passed and result.caption_match >= 0.8 else 1


if __name__ == "__main__":
    sys.exit(main())
