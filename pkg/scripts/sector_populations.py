#!/usr/bin/env python3
"""Tabulate how many raster cells each view sector receives for a range of grids and offsets.

Equal angular wedges on a square raster are not equal in area: a wedge centred on an
axis covers less of the square than one centred on a diagonal. This script makes that
visible.
"""

import argparse

import numpy as np

from bevllm.bev_partition import VIEW_NAMES, GridSpec, build_view_map


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--size", type=int, nargs="+", default=[180])
    parser.add_argument("--offset", type=float, nargs="+", default=[-30.0, -15.0, 0.0, 15.0])
    args = parser.parse_args()

    print(f"{'grid':>9} {'offset':>7}  " + "  ".join(f"{n:>10}" for n in VIEW_NAMES) + "   min/mean")
    for size in args.size:
        for offset in args.offset:
            cells = build_view_map(GridSpec(height=size, width=size, sector_offset_deg=offset)).cells
            pops = np.bincount(cells.ravel(), minlength=len(VIEW_NAMES))
            row = "  ".join(f"{p:>10d}" for p in pops)
            print(f"{size:>4}x{size:<4} {offset:>7.1f}  {row}   {pops.min() / pops.mean():.3f}")


if __name__ == "__main__":
    main()
