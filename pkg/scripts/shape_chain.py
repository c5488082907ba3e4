#!/usr/bin/env python3
"""Push one random BEV map through the untrained encoder and projection at a chosen profile."""

import argparse
import time

import torch

from bevllm.bev_partition import build_view_map
from bevllm.config import PROFILES, profile
from bevllm.llm_bridge import ProjectionMlp, project_queries
from bevllm.pos_encoding import BevFeatureMap, apply_positional_encoding, build_positional_map
from bevllm.qformer import init_qformer


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--profile", default="paper-shape", choices=sorted(PROFILES))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = profile(args.profile)
    grid = cfg.grid()
    start = time.perf_counter()
    values = torch.randn(cfg.bev_channels, grid.height, grid.width, generator=torch.Generator().manual_seed(args.seed))
    encoded = apply_positional_encoding(
        BevFeatureMap(grid, values), build_positional_map(build_view_map(grid), cfg.bev_channels)
    )
    with torch.no_grad():
        queries = init_qformer(cfg.qformer_config(vocab_size=16)).encode_bev(encoded)
        projected = project_queries(ProjectionMlp(cfg.d_q, cfg.d_llm, hidden=cfg.mlp_hidden), queries)
    seconds = time.perf_counter() - start
    shapes = [tuple(encoded.flattened().shape), tuple(queries.shape), tuple(projected.shape)]
    print(" → ".join("×".join(map(str, s)) for s in shapes), f"({seconds:.1f}s)")


if __name__ == "__main__":
    main()
