#!/usr/bin/env python3
"""Map-update timing sweep across mesh element lengths.

Times the non-projection pipeline stages (assignment, elevation fusion,
class accumulation) for one synthetic depth frame replayed over meshes of
varying resolution, and writes a plot-ready CSV.

Example:
    python scripts/benchmark_update.py --extent 4.8 --trials 100 --out bench.csv
"""

import argparse
import sys

from terramesh.evaluation import bench_update, write_bench_csv


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sides", default="0.01,0.02,0.04,0.08")
    parser.add_argument("--extent", type=float, default=0.48)
    parser.add_argument("--frame", default="424x240")
    parser.add_argument("--trials", type=int, default=100)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args()

    sides = [float(s) for s in args.sides.split(",")]
    w, h = (int(v) for v in args.frame.split("x"))
    rows = bench_update(sides, half_extent_m=args.extent, image_size=(w, h), trials=args.trials)

    print(f"{'side':>6s} {'faces':>9s} {'points':>8s} {'stage':>10s} {'mean_ms':>9s} {'std_ms':>8s}")
    for r in rows:
        print(
            f"{r.side_length_m:6g} {r.num_faces:9d} {r.num_points:8d} "
            f"{r.stage:>10s} {1e3 * r.mean_s:9.2f} {1e3 * r.std_s:8.2f}"
        )
    if args.out:
        write_bench_csv(args.out, rows)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
