"""Command line entry point: ``hagsim run|fig5|fig6|failover``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .harness import EXIT_CONFIG, EXIT_INCOMPLETE, EXIT_OK, ConfigError
from .simcore import ms


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _base(path: str | None) -> dict | None:
    if path is None:
        return None
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    merged = harness.default_config()
    for key, value in doc.items():
        merged[key] = value
    if "atsss" in doc and "policy_file" in doc["atsss"]:
        merged["atsss"]["policy_file"] = str((Path(path).parent / doc["atsss"]["policy_file"]).resolve())
    # validate now so config mistakes surface as exit code 2
    harness.load_config(merged, Path(path).parent)
    return merged


def _exit_for(results) -> int:
    return EXIT_OK if all(r.summary.complete for r in results) else EXIT_INCOMPLETE


def cmd_run(args) -> int:
    result = harness.run(harness.load_config(args.config), args.out, args.seed)
    s = result.summary
    done = "incomplete" if not s.complete else f"{s.completion_time_us / 1e6:.3f} s"
    print(f"{s.mode} {'+'.join(s.accesses)} {s.app} {s.direction}: "
          f"{s.delivered_bytes} B delivered, aggregate {s.aggregate_mean_rate_bps / 1e6:.2f} Mbps, done {done}")
    if args.out:
        print(f"wrote {Path(args.out) / 'trace.csv'}, rates.csv, summary.json")
    return _exit_for([result])


def cmd_fig5(args) -> int:
    results = harness.scenario_fig5(args.direction, args.app, _base(args.config), args.seed,
                                    args.transfer_bytes, args.mode, args.out)
    print(harness.fig5_table(results))
    return _exit_for(results.values())


def cmd_fig6(args) -> int:
    results = harness.scenario_fig6(args.direction, args.app, _base(args.config), args.seed,
                                    args.transfer_bytes, args.out)
    print(harness.fig6_table(results))
    return _exit_for(results.values())


def cmd_failover(args) -> int:
    restore = None if args.restore_at is None else ms(args.restore_at)
    result = harness.scenario_failover(ms(args.kill_at), restore, args.access, args.mode,
                                       _base(args.config), args.seed, args.transfer_bytes,
                                       args.kill_both, args.direction, args.out)
    s = result.summary
    done = "incomplete" if not s.complete else f"{s.completion_time_us / 1e6:.3f} s"
    lat = "n/a" if s.switch_latency_us is None else f"{s.switch_latency_us / 1000:.1f} ms"
    print(f"delivered {s.delivered_bytes}/{s.transfer_bytes} B, duplicates {s.duplicate_bytes} B, "
          f"resets {s.connection_resets}, switch latency {lat}, done {done}")
    return _exit_for([result])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hagsim", description="Hybrid access / converged core simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=_u64)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    def common(sp, transfer_default):
        sp.add_argument("--direction", choices=["dl", "ul", "downlink", "uplink"], default="dl")
        sp.add_argument("--app", choices=["scp", "wget", "iperf"], default="scp")
        sp.add_argument("--seed", type=_u64, default=1)
        sp.add_argument("--config", help="JSON overrides merged onto the defaults")
        sp.add_argument("--transfer-bytes", type=int, default=transfer_default)
        sp.add_argument("--out")

    f5 = sub.add_parser("fig5", help="link rates: FBB only, MBB only, both")
    common(f5, None)
    f5.add_argument("--mode", choices=["endpoint-mptcp", "hag", "converged-core"], default="hag")
    f5.set_defaults(func=cmd_fig5)

    f6 = sub.add_parser("fig6", help="per-link session setup times")
    common(f6, 2_000_000)
    f6.set_defaults(func=cmd_fig6)

    fo = sub.add_parser("failover", help="take an access down mid-transfer")
    common(fo, None)
    fo.add_argument("--kill-at", type=float, required=True, metavar="MS")
    fo.add_argument("--restore-at", type=float, metavar="MS")
    fo.add_argument("--access", choices=["fbb", "mbb"], default="fbb")
    fo.add_argument("--kill-both", action="store_true")
    fo.add_argument("--mode", choices=["endpoint-mptcp", "hag", "converged-core"], default="converged-core")
    fo.set_defaults(func=cmd_failover)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
