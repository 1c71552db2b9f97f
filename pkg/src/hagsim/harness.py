"""Experiment wiring: config parsing, seeded runs, the testbed scenarios, summaries."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from . import apps as appmod
from .atsss import PolicyError, PolicyFramework, SessionManager, load_policies
from .mptransport import FAST, Connection, TransportError
from .netpath import CONVERGED_CORE, DOWN, HAG, UP, LinkSpec, bdp_queue_bytes, build_topology
from .simcore import LINK_STATE, Simulator, ms, seconds
from .trace import Trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INCOMPLETE = 3
INCOMPLETE = "incomplete"


class ConfigError(ValueError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


def _data_path(name: str) -> Path:
    return Path(str(resources.files("hagsim") / "data" / name))


def schema() -> dict:
    return json.loads(_data_path("config.schema.json").read_text())


def default_config() -> dict:
    doc = json.loads(_data_path("defaults.json").read_text())
    doc["atsss"]["policy_file"] = str(_data_path(doc["atsss"]["policy_file"]))
    return doc


@dataclass
class ExperimentConfig:
    mode: str
    links: dict[str, tuple[LinkSpec, LinkSpec]]
    workloads: list[appmod.WorkloadSpec]
    node_delay: int = ms(0.5)
    advertise_mode: str = "standard"
    scheduler: str = "minrtt"
    initial_cwnd_segments: int = 10
    policies: dict | None = None
    policy_updates: list = field(default_factory=list)
    monitor_window: int = seconds(1)
    cp_delay: int = ms(53)
    app_overrides: dict = field(default_factory=dict)
    link_events: list[tuple[int, str, str]] = field(default_factory=list)
    seed: int = 1
    t_end: int = seconds(300)
    out_dir: str | None = None
    record_trace: bool = True
    raw: dict = field(default_factory=dict, repr=False)


def load_config(source: str | Path | dict, base_dir: str | Path | None = None) -> ExperimentConfig:
    """Validate a config document (path or parsed dict) and build an ExperimentConfig.

    Raises ConfigError naming the offending field.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        base_dir = path.parent if base_dir is None else base_dir
    else:
        doc = copy.deepcopy(source)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "config"
        raise ConfigError(where, err.message)

    mode = doc["mode"]
    links = {}
    for access_id, pair in doc["accesses"].items():
        specs = []
        rtt = ms(pair["ul"]["owd_ms"]) + ms(pair["dl"]["owd_ms"])
        for d in ("ul", "dl"):
            ld = pair[d]
            queue = ld.get("queue_bytes") or bdp_queue_bytes(ld["rate_bps"], rtt)
            specs.append(LinkSpec(ld["rate_bps"], ms(ld["owd_ms"]), queue, ld.get("loss_prob", 0.0)))
        links[access_id] = tuple(specs)

    transport = doc.get("transport", {})
    advertise = transport.get("advertise_mode", "standard")
    if advertise == FAST and mode != CONVERGED_CORE:
        raise ConfigError("transport.advertise_mode", "fast advertisement needs mode converged-core")

    overrides = doc.get("apps", {})
    for app in overrides:
        if app not in appmod.APPS:
            raise ConfigError(f"apps.{app}", "unknown app")

    workloads = []
    for i, w in enumerate(doc["workloads"]):
        workloads.append(appmod.WorkloadSpec(
            app=w["app"], direction=w.get("direction", "downlink"),
            transfer_bytes=w.get("transfer_bytes", appmod.DEFAULT_TRANSFER_BYTES),
            service_class=w.get("service_class", "default"),
            start_at=ms(w.get("start_at_ms", 0)), flow_id=i + 1,
        ))

    atsss = doc.get("atsss", {})
    policies = None
    updates = []
    if mode == CONVERGED_CORE:
        try:
            if atsss.get("policies") is not None:
                policies = load_policies(atsss["policies"])
            elif atsss.get("policy_file"):
                policies = load_policies(_resolve(atsss["policy_file"], base_dir))
            else:
                raise ConfigError("atsss.policy_file", "converged-core mode needs a policy file")
            for j, upd in enumerate(atsss.get("policy_updates", [])):
                src = upd.get("policies") or _resolve(upd["policy_file"], base_dir)
                updates.append((ms(upd["at_ms"]), load_policies(src)))
        except PolicyError as exc:
            raise ConfigError("atsss.policy_file", str(exc)) from None
        for p in policies.values():
            for a in p.access_priority:
                if a not in links:
                    raise ConfigError("atsss.policies", f"{p.service_class} names undefined access {a!r}")

    events = []
    for j, ev in enumerate(doc.get("link_events", [])):
        if ev["access"] not in links:
            raise ConfigError(f"link_events.{j}.access", f"undefined access {ev['access']!r}")
        events.append((ms(ev["at_ms"]), ev["access"], ev["state"]))

    return ExperimentConfig(
        mode=mode, links=links, workloads=workloads,
        node_delay=ms(doc.get("node_delay_ms", 0.5)),
        advertise_mode=advertise,
        scheduler=transport.get("scheduler", "minrtt"),
        initial_cwnd_segments=transport.get("initial_cwnd_segments", 10),
        policies=policies, policy_updates=updates,
        monitor_window=ms(atsss.get("monitor_window_ms", 1000)),
        cp_delay=ms(atsss.get("cp_delay_ms", 53)),
        app_overrides=overrides, link_events=sorted(events, key=lambda e: e[0]),
        seed=doc.get("seed", 1), t_end=seconds(doc.get("t_end_s", 300)),
        out_dir=doc.get("out_dir"), record_trace=doc.get("record_trace", True), raw=doc,
    )


def _resolve(path: str, base_dir: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base_dir / p


@dataclass
class RunSummary:
    mode: str
    accesses: list[str]
    seed: int
    direction: str
    app: str
    transfer_bytes: int
    delivered_bytes: int
    completion_time_us: int | str
    steady_window_us: list[int] | None
    mean_rates_bps: dict[str, float]
    aggregate_mean_rate_bps: float
    setup_times_us: dict[str, int | None]
    drop_counts: dict[str, int]
    flows: list[dict] = field(default_factory=list)
    decisions: list[dict] = field(default_factory=list)
    standalone_rates_bps: dict[str, float] = field(default_factory=dict)
    utilization: dict[str, float] = field(default_factory=dict)
    switch_latency_us: int | None = None
    duplicate_bytes: int = 0
    connection_resets: int = 0

    @property
    def complete(self) -> bool:
        return self.completion_time_us != INCOMPLETE

    def to_dict(self) -> dict:
        return asdict(self)

    def trace_fields(self) -> dict:
        d = self.to_dict()
        return {k: d[k] for k in TRACE_DERIVED}


# fields that summarize() reproduces from trace.csv alone
TRACE_DERIVED = ("completion_time_us", "steady_window_us", "mean_rates_bps", "aggregate_mean_rate_bps",
                 "setup_times_us", "drop_counts", "flows")


def _flow_metrics(trace: Trace, wl: appmod.WorkloadSpec, accesses: list[str]) -> dict:
    records = [r for r in trace.records if r[5] == wl.flow_id]
    window = appmod.steady_state_window(records, wl.transfer_bytes)
    done = appmod.completion_time(records, wl.transfer_bytes)
    rates = {a: 0.0 for a in accesses}
    if window is not None:
        rates.update(appmod.mean_rates(records, window, wl.direction))
    link_dir = "dl" if wl.direction == "downlink" else "ul"
    setup = {a: appmod.measure_setup_time(records, f"{a}.{link_dir}", wl.start_at) for a in accesses}
    return {
        "flow": wl.flow_id, "app": wl.app, "direction": wl.direction,
        "completion_time_us": INCOMPLETE if done is None else done,
        "steady_window_us": None if window is None else list(window),
        "mean_rates_bps": {a: round(rates[a], 3) for a in accesses},
        "setup_times_us": setup,
    }


def summarize(trace: Trace, config: ExperimentConfig, decisions: list | None = None,
              delivered: int | None = None) -> RunSummary:
    """Build the summary from the trace; the trace is the only measurement source."""
    accesses = list(config.links)
    flows = [_flow_metrics(trace, wl, accesses) for wl in config.workloads]
    first = flows[0]
    wl = config.workloads[0]
    completion = first["completion_time_us"]
    if any(f["completion_time_us"] == INCOMPLETE for f in flows):
        completion = INCOMPLETE
    rates = first["mean_rates_bps"]
    return RunSummary(
        mode=config.mode, accesses=accesses, seed=config.seed, direction=wl.direction, app=wl.app,
        transfer_bytes=wl.transfer_bytes,
        delivered_bytes=delivered if delivered is not None else 0,
        completion_time_us=completion, steady_window_us=first["steady_window_us"],
        mean_rates_bps=rates, aggregate_mean_rate_bps=round(sum(rates.values()), 3),
        setup_times_us=first["setup_times_us"], drop_counts=appmod.drop_counts(trace),
        flows=flows, decisions=list(decisions or []),
    )


@dataclass
class RunResult:
    summary: RunSummary
    trace: Trace
    sim: Simulator
    connections: list
    sessions: list
    topology: Any
    manager: SessionManager | None = None
    rates: appmod.MetricSeries | None = None


def simulate(config: ExperimentConfig, record_cwnd: bool = False) -> RunResult:
    """Run one experiment in memory."""
    sim = Simulator(config.seed)
    trace = Trace(enabled=config.record_trace)
    topo = build_topology(sim, config.mode, config.links, trace, config.node_delay)
    manager = None
    framework = None
    if config.mode == CONVERGED_CORE:
        framework = PolicyFramework(sim, config.policies, config.cp_delay)
        manager = SessionManager(sim, framework, topo, config.monitor_window)
        for at, entries in config.policy_updates:
            sim.schedule(at, lambda _, e=entries: framework.update(e))

    connections = []
    sessions = []
    remaining = {wl.flow_id for wl in config.workloads}

    def finished(session):
        remaining.discard(session.workload.flow_id)
        if manager is not None:
            manager.finish(session.workload.flow_id)
        if not remaining:
            sim.stop()

    for wl in config.workloads:
        order = list(config.links)
        if config.policies is not None:
            prio = config.policies.get(wl.service_class, config.policies["default"]).access_priority
            order = [a for a in prio if a in config.links] + [a for a in order if a not in prio]
        conn = Connection(sim, wl.flow_id, topo, order, config.advertise_mode,
                          config.initial_cwnd_segments, record_cwnd=record_cwnd)
        graph = appmod.setup_exchanges(wl.app, config.app_overrides.get(wl.app))
        session = appmod.AppSession(sim, conn, wl, graph, parallel=len(order) > 1, on_complete=finished)
        if manager is not None:
            conn.on_connected.append(
                lambda t, wl=wl, conn=conn: manager.admit(wl.flow_id, wl.service_class, wl.direction, conn))
        connections.append(conn)
        sessions.append(session)
        session.start()

    def link_event(ev):
        _, access_id, state = ev
        acc = topo.accesses[access_id]
        if (state == UP) == acc.up:
            return
        acc.set_state(state)
        for conn in connections:
            if state == DOWN:
                conn.access_down(access_id)
            else:
                conn.access_up(access_id)
        if manager is not None:
            manager.on_link_state(access_id, state)

    for ev in config.link_events:
        sim.schedule(ev[0], link_event, ev, LINK_STATE)

    sim.run_until(config.t_end)

    delivered = 0
    for session, conn in zip(sessions, connections):
        pipe = conn.pipe(session.workload.direction)
        if session.bulk_range is not None:
            start, end = session.bulk_range
            delivered += max(0, min(pipe.delivered, end) - start)
    decisions = manager.log if manager is not None else []
    summary = summarize(trace, config, decisions, delivered)
    summary.duplicate_bytes = sum(c.uplink.duplicate_bytes + c.downlink.duplicate_bytes for c in connections)
    summary.connection_resets = sum(c.resets for c in connections)
    rates = appmod.sample_link_rate(trace, seconds(1), config.workloads[0].direction)
    return RunResult(summary, trace, sim, connections, sessions, topo, manager, rates)


def write_artifacts(result: RunResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trace": out / "trace.csv", "rates": out / "rates.csv", "summary": out / "summary.json"}
    result.trace.to_csv(paths["trace"])
    result.rates.to_csv(paths["rates"])
    paths["summary"].write_text(json.dumps(result.summary.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths


def run(config: ExperimentConfig | dict | str | Path, out_dir: str | Path | None = None,
        seed: int | None = None) -> RunResult:
    """Parse if needed, simulate, and write trace.csv / rates.csv / summary.json when an
    output directory is given (argument or config)."""
    if not isinstance(config, ExperimentConfig):
        config = load_config(config)
    if seed is not None:
        config = copy.copy(config)
        config.seed = seed
    result = simulate(config)
    target = out_dir if out_dir is not None else config.out_dir
    if target is not None:
        write_artifacts(result, target)
    return result


# ---- scenarios -------------------------------------------------------------

def _variant(base: dict, accesses: list[str], mode: str | None = None, advertise: str | None = None,
             **workload) -> dict:
    doc = copy.deepcopy(base)
    doc["accesses"] = {a: doc["accesses"][a] for a in accesses}
    if mode is not None:
        doc["mode"] = mode
    doc.setdefault("transport", {})
    if advertise is not None:
        doc["transport"]["advertise_mode"] = advertise
    if doc["mode"] != CONVERGED_CORE and doc["transport"].get("advertise_mode") == FAST:
        doc["transport"]["advertise_mode"] = "standard"
    if doc["mode"] == CONVERGED_CORE and len(accesses) == 1:
        # single-access runs keep only policies that name that access
        pol = doc.get("atsss", {})
        if pol.get("policy_file") and not pol.get("policies"):
            entries = json.loads(Path(pol["policy_file"]).read_text())
            entries = entries.get("policies", entries)
            pol["policies"] = [dict(p, access_priority=[a for a in p["access_priority"] if a in accesses])
                               for p in entries]
    w = doc["workloads"][0]
    for key, value in workload.items():
        if value is not None:
            w[key] = value
    doc["workloads"] = [w]
    return doc


STANDALONE = ("fbb-only", "mbb-only")


def scenario_fig5(direction: str = "downlink", app: str = "scp", base: dict | None = None,
                  seed: int = 1, transfer_bytes: int | None = None, mode: str = HAG,
                  out_dir: str | Path | None = None) -> dict[str, RunResult]:
    """FBB only, MBB only and both, same seed and workload; utilization ratios filled in."""
    base = base or default_config()
    direction = _direction(direction)
    variants = {
        "fbb-only": ["fbb"], "mbb-only": ["mbb"], "fmc": ["fbb", "mbb"],
    }
    results = {}
    for label, accs in variants.items():
        doc = _variant(base, accs, mode=mode, app=app, direction=direction, transfer_bytes=transfer_bytes)
        doc["seed"] = seed
        results[label] = run(doc, None if out_dir is None else Path(out_dir) / label)
    fmc = results["fmc"].summary
    for label, a in (("fbb-only", "fbb"), ("mbb-only", "mbb")):
        alone = results[label].summary.mean_rates_bps.get(a, 0.0)
        fmc.standalone_rates_bps[a] = alone
        if alone > 0:
            fmc.utilization[a] = round(appmod.utilization_ratio(fmc.mean_rates_bps.get(a, 0.0), alone), 4)
    if out_dir is not None:
        (Path(out_dir) / "fmc" / "summary.json").write_text(
            json.dumps(fmc.to_dict(), indent=2, sort_keys=True) + "\n")
    return results


def scenario_fig6(direction: str = "downlink", app: str = "scp", base: dict | None = None,
                  seed: int = 1, transfer_bytes: int | None = 2_000_000,
                  out_dir: str | Path | None = None) -> dict[str, RunResult]:
    """Per-link setup times: single-access runs and the converged core with fast advertisement."""
    base = base or default_config()
    direction = _direction(direction)
    variants = {
        "fbb-only": (["fbb"], "standard"), "mbb-only": (["mbb"], "standard"), "fmc": (["fbb", "mbb"], FAST),
    }
    results = {}
    for label, (accs, adv) in variants.items():
        doc = _variant(base, accs, mode=CONVERGED_CORE, advertise=adv, app=app, direction=direction,
                       transfer_bytes=transfer_bytes)
        doc["seed"] = seed
        results[label] = run(doc, None if out_dir is None else Path(out_dir) / label)
    return results


def scenario_failover(kill_at: int = seconds(2), restore_at: int | None = None, access: str = "fbb",
                      mode: str = CONVERGED_CORE, base: dict | None = None, seed: int = 1,
                      transfer_bytes: int | None = None, kill_both: bool = False,
                      direction: str = "downlink", out_dir: str | Path | None = None) -> RunResult:
    """Split transfer over both accesses; ``access`` goes down at ``kill_at``."""
    base = base or default_config()
    doc = _variant(base, ["fbb", "mbb"], mode=mode, transfer_bytes=transfer_bytes,
                   direction=_direction(direction), service_class="bulk")
    doc["seed"] = seed
    events = [{"at_ms": kill_at / 1000, "access": access, "state": "down"}]
    if kill_both:
        other = "mbb" if access == "fbb" else "fbb"
        events.append({"at_ms": kill_at / 1000, "access": other, "state": "down"})
    if restore_at is not None:
        events.append({"at_ms": restore_at / 1000, "access": access, "state": "up"})
    doc["link_events"] = events
    if kill_both:
        doc["t_end_s"] = min(doc.get("t_end_s", 300), kill_at / 1e6 + 30)
    result = run(doc, out_dir)
    after = [d for d in result.summary.decisions if d["time_us"] >= kill_at and d["action"] != "admit"]
    if after:
        result.summary.switch_latency_us = after[0]["time_us"] - kill_at
    if out_dir is not None:
        write_artifacts(result, out_dir)
    return result


def _direction(d: str) -> str:
    return {"dl": "downlink", "ul": "uplink"}.get(d, d)


# ---- tables ----------------------------------------------------------------

def fig5_table(results: dict[str, RunResult]) -> str:
    lines = [f"{'mode':<10}{'fbb Mbps':>10}{'mbb Mbps':>10}{'agg Mbps':>10}{'done s':>9}"]
    for label, res in results.items():
        s = res.summary
        r = s.mean_rates_bps
        done = "incomplete" if not s.complete else f"{s.completion_time_us / 1e6:.2f}"
        lines.append(f"{label:<10}{r.get('fbb', 0) / 1e6:>10.2f}{r.get('mbb', 0) / 1e6:>10.2f}"
                     f"{s.aggregate_mean_rate_bps / 1e6:>10.2f}{done:>9}")
    util = results["fmc"].summary.utilization
    lines.append("utilization  " + "  ".join(f"{a}={u:.3f}" for a, u in util.items()))
    return "\n".join(lines)


def fig6_table(results: dict[str, RunResult]) -> str:
    lines = [f"{'mode':<10}{'fbb setup ms':>14}{'mbb setup ms':>14}"]
    for label, res in results.items():
        st = res.summary.setup_times_us

        def fmt(v):
            return "never" if v is None else f"{v / 1000:.1f}"
        lines.append(f"{label:<10}{fmt(st.get('fbb')):>14}{fmt(st.get('mbb')):>14}")
    return "\n".join(lines)
