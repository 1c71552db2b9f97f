#!/usr/bin/env python3
"""Per-link session setup times for scp, wget and iperf."""

import argparse
from pathlib import Path

from hagsim.harness import fig6_table, scenario_fig6


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/fig6")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--directions", nargs="+", default=["downlink", "uplink"])
    args = ap.parse_args()
    for direction in args.directions:
        for app in ("scp", "wget", "iperf"):
            results = scenario_fig6(direction, app, seed=args.seed,
                                    out_dir=Path(args.out) / direction / app)
            print(f"\n== {direction} {app} ==")
            print(fig6_table(results))


if __name__ == "__main__":
    main()
