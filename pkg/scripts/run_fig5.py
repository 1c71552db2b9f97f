#!/usr/bin/env python3
"""Link rates with FBB only, MBB only and both, for every app and direction.

Writes per-run artifacts under --out and prints one table per (direction, app).
"""

import argparse
import json
from pathlib import Path

from hagsim.harness import fig5_table, scenario_fig5


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/fig5")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--apps", nargs="+", default=["scp", "wget", "iperf"])
    ap.add_argument("--directions", nargs="+", default=["downlink", "uplink"])
    ap.add_argument("--mode", default="hag")
    args = ap.parse_args()

    rows = []
    for direction in args.directions:
        for app in args.apps:
            out = Path(args.out) / direction / app
            results = scenario_fig5(direction, app, seed=args.seed, mode=args.mode, out_dir=out)
            print(f"\n== {direction} {app} ==")
            print(fig5_table(results))
            s = results["fmc"].summary
            rows.append({"direction": direction, "app": app, "utilization": s.utilization,
                         "aggregate_mbps": round(s.aggregate_mean_rate_bps / 1e6, 2)})
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "overview.json").write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
