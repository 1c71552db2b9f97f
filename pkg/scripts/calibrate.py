#!/usr/bin/env python3
"""Sweep FBB random loss and report the downlink fig5 scenario numbers over several seeds.

This is how the shipped FBB loss default was picked; see the README.
"""

import argparse
import statistics

from hagsim.harness import default_config, scenario_fig5


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--loss", type=float, nargs="+", default=[0.0, 1e-4, 1.25e-4, 1.5e-4])
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--direction", default="downlink")
    args = ap.parse_args()
    for loss in args.loss:
        aggs, fbb, mbb = [], [], []
        for seed in range(1, args.seeds + 1):
            base = default_config()
            for d in ("ul", "dl"):
                base["accesses"]["fbb"][d]["loss_prob"] = loss
            s = scenario_fig5(args.direction, "scp", base=base, seed=seed)["fmc"].summary
            aggs.append(s.aggregate_mean_rate_bps / 1e6)
            fbb.append(s.utilization["fbb"])
            mbb.append(s.utilization["mbb"])
        print(f"loss={loss:<9g} aggregate {statistics.mean(aggs):6.1f} Mbps "
              f"[{min(aggs):.1f}, {max(aggs):.1f}]  fbb util {statistics.mean(fbb):.3f} "
              f"[{min(fbb):.3f}, {max(fbb):.3f}]  mbb util {statistics.mean(mbb):.3f}")


if __name__ == "__main__":
    main()
