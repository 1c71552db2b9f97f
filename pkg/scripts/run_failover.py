#!/usr/bin/env python3
"""Sweep kill times for one access and report completion and switch latency."""

import argparse

from hagsim.harness import scenario_failover
from hagsim.simcore import ms


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--access", default="fbb", choices=["fbb", "mbb"])
    ap.add_argument("--kill-at", type=float, nargs="+", default=[1000, 3000, 6000], metavar="MS")
    ap.add_argument("--restore-after", type=float, default=None, metavar="MS")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    print(f"{'kill ms':>8}{'done s':>9}{'delivered':>12}{'dup B':>10}{'resets':>7}")
    for k in args.kill_at:
        restore = None if args.restore_after is None else ms(k + args.restore_after)
        s = scenario_failover(ms(k), restore, args.access, seed=args.seed).summary
        done = "-" if not s.complete else f"{s.completion_time_us / 1e6:.2f}"
        print(f"{k:>8.0f}{done:>9}{s.delivered_bytes:>12}{s.duplicate_bytes:>10}{s.connection_resets:>7}")


if __name__ == "__main__":
    main()
