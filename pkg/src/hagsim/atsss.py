"""Access traffic steering, switching and splitting.

Policy store and conveyance (PCF/SMF roles), user-plane enforcement at the UE
and UPF, per-flow monitoring, and the steer/switch/split decision rules. The
decisions are turned into transport control calls by :func:`apply_decision`.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .simcore import POLICY, Simulator, ms, seconds

STEER = "steer"
SWITCH = "switch"
SPLIT = "split"
MODES = (STEER, SWITCH, SPLIT)

UE = "UE"
UPF = "UPF"
SMF = "SMF"

STAY = "stay"
START_SPLIT = "start_split"
STOP_SPLIT = "stop_split"

DEFAULT_WINDOW = seconds(1)
DEFAULT_HYSTERESIS = 0.1
DEFAULT_CP_DELAY = ms(53)
EWMA_GAIN = 1 / 8


class PolicyError(ValueError):
    pass


class SteeringFailure(RuntimeError):
    """No access satisfies the policy."""


@dataclass(frozen=True)
class Thresholds:
    min_throughput_bps: float | None = None
    max_rtt: int | None = None  # microseconds
    max_loss_rate: float | None = None

    def __post_init__(self):
        for name in ("min_throughput_bps", "max_rtt", "max_loss_rate"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise PolicyError(f"threshold {name} must be nonnegative")


@dataclass(frozen=True)
class AtsssPolicy:
    service_class: str
    mode: str
    access_priority: tuple[str, ...]
    thresholds: Thresholds = Thresholds()
    hysteresis: float = DEFAULT_HYSTERESIS

    def __post_init__(self):
        if self.mode not in MODES:
            raise PolicyError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.access_priority:
            raise PolicyError(f"policy {self.service_class!r} has an empty access_priority")
        if not 0 <= self.hysteresis < 1:
            raise PolicyError("hysteresis must lie in [0, 1)")
        object.__setattr__(self, "access_priority", tuple(self.access_priority))

    @classmethod
    def from_dict(cls, d: Mapping) -> "AtsssPolicy":
        th = d.get("thresholds") or {}
        max_rtt = th.get("max_rtt_ms")
        return cls(
            service_class=d["service_class"],
            mode=d["mode"],
            access_priority=tuple(d["access_priority"]),
            thresholds=Thresholds(
                th.get("min_throughput_bps"),
                None if max_rtt is None else ms(max_rtt),
                th.get("max_loss_rate"),
            ),
            hysteresis=d.get("hysteresis", DEFAULT_HYSTERESIS),
        )

    def to_dict(self) -> dict:
        th = self.thresholds
        return {
            "service_class": self.service_class,
            "mode": self.mode,
            "access_priority": list(self.access_priority),
            "thresholds": {
                "min_throughput_bps": th.min_throughput_bps,
                "max_rtt_ms": None if th.max_rtt is None else th.max_rtt / 1000,
                "max_loss_rate": th.max_loss_rate,
            },
            "hysteresis": self.hysteresis,
        }


@dataclass
class AccessState:
    access_id: str
    up: bool = True
    measured_rtt: int | None = None
    measured_throughput_bps: float = 0.0
    measured_loss_rate: float | None = None
    samples: int = 0

    @property
    def measured(self) -> bool:
        return self.samples > 0


def violates(th: Thresholds, acc: AccessState, margin: float = 0.0) -> bool:
    """True when ``acc`` fails a threshold tightened (margin > 0) or relaxed (margin < 0).

    Unmeasured metrics never disqualify.
    """
    if not acc.up:
        return True
    if th.min_throughput_bps is not None and acc.samples:
        if acc.measured_throughput_bps < th.min_throughput_bps * (1 + margin):
            return True
    if th.max_rtt is not None and acc.measured_rtt is not None:
        if acc.measured_rtt > th.max_rtt * (1 - margin):
            return True
    if th.max_loss_rate is not None and acc.measured_loss_rate is not None:
        if acc.measured_loss_rate > th.max_loss_rate * (1 - margin):
            return True
    return False


def _index(accesses: Iterable[AccessState] | Mapping[str, AccessState]) -> dict[str, AccessState]:
    if isinstance(accesses, Mapping):
        return dict(accesses)
    return {a.access_id: a for a in accesses}


def select_access(policy: AtsssPolicy, accesses) -> list[str]:
    """Qualifying accesses in priority order.

    Steer and switch policies get a one-element list (the head); split gets every
    qualifying access with the primary first. Raises SteeringFailure if none
    qualifies.
    """
    states = _index(accesses)
    ok = [a for a in policy.access_priority if a in states and not violates(policy.thresholds, states[a])]
    if not ok:
        raise SteeringFailure(f"no access satisfies policy {policy.service_class!r}")
    return ok if policy.mode == SPLIT else ok[:1]


@dataclass(frozen=True)
class Decision:
    action: str
    access: str | None = None
    reason: str = ""


@dataclass(frozen=True)
class MonitorSample:
    access_id: str
    time: int
    acked_bytes: int = 0
    rtt: int | None = None
    losses: int = 0


class FlowMonitor:
    """Sliding window of per-access observations for one flow."""

    def __init__(self, flow_id: int, window: int = DEFAULT_WINDOW, started_at: int = 0):
        if window <= 0:
            raise ValueError("window must be positive")
        self.flow_id = flow_id
        self.window = window
        self.started_at = started_at
        self.samples: dict[str, deque] = {}
        self.now = started_at

    def record(self, access_id: str, time: int, acked_bytes: int = 0, rtt: int | None = None,
               losses: int = 0) -> None:
        q = self.samples.get(access_id)
        if q is None:
            q = self.samples[access_id] = deque()
        q.append((time, acked_bytes, rtt, losses))
        if time > self.now:
            self.now = time

    def _trim(self, now: int) -> None:
        cutoff = now - self.window
        for q in self.samples.values():
            while q and q[0][0] <= cutoff:
                q.popleft()

    def full_window(self, now: int) -> bool:
        return now - self.started_at >= self.window

    def access_state(self, access_id: str, now: int | None = None, up: bool = True) -> AccessState:
        now = self.now if now is None else now
        self._trim(now)
        q = self.samples.get(access_id, ())
        acked = 0
        rtt = None
        loss = None
        for _, nbytes, sample_rtt, losses in q:
            acked += nbytes
            if sample_rtt is not None:
                rtt = sample_rtt if rtt is None else rtt + (sample_rtt - rtt) * EWMA_GAIN
            if nbytes or losses:
                hit = 1.0 if losses else 0.0
                loss = hit if loss is None else loss + (hit - loss) * EWMA_GAIN
        throughput = acked * 8 / (self.window / 1_000_000)
        return AccessState(access_id, up, None if rtt is None else int(round(rtt)), throughput, loss, len(q))


def monitor_update(monitor: FlowMonitor, sample: MonitorSample, up: bool = True) -> AccessState:
    monitor.record(sample.access_id, sample.time, sample.acked_bytes, sample.rtt, sample.losses)
    return monitor.access_state(sample.access_id, sample.time, up)


def evaluate(monitor: FlowMonitor | None, policy: AtsssPolicy, accesses, active: Iterable[str],
             now: int, last_decision_at: int | None = None, window: int = DEFAULT_WINDOW) -> Decision:
    """One decision for a live flow currently carried on ``active`` (primary first).

    An active access that went down is acted on at once. Everything else waits
    for a full monitor window and is limited to one decision per window.
    """
    states = _index(accesses)
    active = [a for a in active]
    th = policy.thresholds
    h = policy.hysteresis
    down = [a for a in active if a in states and not states[a].up]
    if down:
        if policy.mode == SPLIT and len(active) > len(down):
            return Decision(STOP_SPLIT, down[0], "access down")
        for alt in policy.access_priority:
            if alt not in active and alt in states and not violates(th, states[alt]):
                return Decision(SWITCH, alt, "access down")
        return Decision(STAY, None, "access down, no qualifying alternative")

    if monitor is not None and not monitor.full_window(now):
        return Decision(STAY, None, "warming up")
    if last_decision_at is not None and now - last_decision_at < window:
        return Decision(STAY, None, "rate limited")

    if policy.mode == SPLIT:
        for a in active:
            if violates(th, states[a], -h) and len(active) > 1:
                return Decision(STOP_SPLIT, a, "threshold violated")
        for alt in policy.access_priority:
            if alt not in active and alt in states and not violates(th, states[alt], h):
                return Decision(START_SPLIT, alt, "second access qualifies")
        return Decision(STAY)

    if not active:
        return Decision(STAY)
    current = active[0]
    cur = states.get(current)
    if cur is not None and violates(th, cur, -h):
        for alt in policy.access_priority:
            if alt != current and alt in states and not violates(th, states[alt], h):
                return Decision(SWITCH, alt, "threshold violated")
        return Decision(STAY, None, "threshold violated, no alternative with margin")
    if policy.mode == SWITCH:
        # return to a preferred access once it clears the thresholds with margin
        for alt in policy.access_priority:
            if alt == current:
                break
            if alt in states and states[alt].measured and not violates(th, states[alt], h):
                return Decision(SWITCH, alt, "preferred access qualifies")
    return Decision(STAY)


@dataclass
class PolicyTable:
    location: str
    entries: dict[str, AtsssPolicy] = field(default_factory=dict)
    version: int = 0

    def lookup(self, service_class: str) -> AtsssPolicy:
        policy = self.entries.get(service_class)
        if policy is None:
            policy = self.entries.get("default")
        if policy is None:
            raise PolicyError(f"{self.location} table has no entry for {service_class!r} and no default")
        return policy

    def install(self, entries: Mapping[str, AtsssPolicy], version: int) -> bool:
        if version <= self.version:
            return False
        self.entries = dict(entries)
        self.version = version
        return True


def load_policies(source: str | Path | list | dict) -> dict[str, AtsssPolicy]:
    """Policy document: a list of entries or ``{"policies": [...]}``; a path is read as JSON."""
    if isinstance(source, (str, Path)):
        try:
            doc = json.loads(Path(source).read_text())
        except FileNotFoundError as exc:
            raise PolicyError(f"policy file not found: {source}") from exc
    else:
        doc = source
    if isinstance(doc, dict):
        doc = doc.get("policies", [])
    entries = {}
    for item in doc:
        try:
            policy = AtsssPolicy.from_dict(item)
        except KeyError as exc:
            raise PolicyError(f"policy entry missing field {exc.args[0]!r}") from exc
        if policy.service_class in entries:
            raise PolicyError(f"duplicate service class {policy.service_class!r}")
        entries[policy.service_class] = policy
    if "default" not in entries:
        raise PolicyError("policy document must define a 'default' service class")
    return entries


class PolicyFramework:
    """SMF-held master table and the UE/UPF copies it conveys with a delay."""

    def __init__(self, sim: Simulator, entries: Mapping[str, AtsssPolicy], cp_delay: int = DEFAULT_CP_DELAY):
        self.sim = sim
        self.cp_delay = cp_delay
        self.tables = {loc: PolicyTable(loc) for loc in (SMF, UE, UPF)}
        for table in self.tables.values():
            table.install(entries, 1)
        self.deliveries: list[tuple[int, str, int]] = []

    @property
    def smf(self) -> PolicyTable:
        return self.tables[SMF]

    def update(self, entries: Mapping[str, AtsssPolicy]) -> int:
        """New SMF version, conveyed to both enforcement points."""
        version = self.smf.version + 1
        self.smf.install(entries, version)
        for target in (UE, UPF):
            convey_policy(self, target, self.cp_delay)
        return version

    def converged(self) -> bool:
        v = self.smf.version
        return all(t.version == v and t.entries == self.smf.entries for t in self.tables.values())


def convey_policy(framework: PolicyFramework, target: str, cp_delay: int | None = None) -> int | None:
    """Schedule delivery of the SMF's current table to ``target``; None if nothing newer."""
    if target not in (UE, UPF):
        raise PolicyError(f"policies are conveyed to UE or UPF, not {target!r}")
    smf = framework.smf
    if smf.version <= framework.tables[target].version:
        return None
    snapshot = (dict(smf.entries), smf.version)
    delay = framework.cp_delay if cp_delay is None else cp_delay

    def deliver(_):
        if framework.tables[target].install(*snapshot):
            framework.deliveries.append((framework.sim.now, target, snapshot[1]))

    return framework.sim.schedule_in(delay, deliver, None, POLICY)


@dataclass(frozen=True)
class Enforcement:
    location: str
    policy: AtsssPolicy
    normal: tuple[str, ...]
    backup: tuple[str, ...]


def enforcement_point(direction: str) -> str:
    if direction in ("uplink", "ue"):
        return UE
    if direction in ("downlink", "network"):
        return UPF
    raise PolicyError(f"unknown flow direction {direction!r}")


def enforce(service_class: str, direction: str, tables: Mapping[str, PolicyTable], accesses) -> Enforcement:
    """Which accesses carry a new flow, read from the UE table (uplink) or UPF table (downlink)."""
    location = enforcement_point(direction)
    policy = tables[location].lookup(service_class)
    states = _index(accesses)
    chosen = select_access(policy, states)
    backup = tuple(a for a in policy.access_priority if a in states and a not in chosen)
    return Enforcement(location, policy, tuple(chosen), backup)


def apply_enforcement(enf: Enforcement, conn) -> None:
    for a in enf.normal:
        if a in conn.accesses:
            conn.set_access_priority(a, "normal")
    for a in enf.backup:
        if a in conn.accesses:
            conn.set_access_priority(a, "backup")


def apply_decision(decision: Decision, conn, active: list[str]) -> list[str]:
    """Translate a decision into subflow priorities; returns the new active list."""
    if decision.action == STAY or decision.access is None:
        return active
    if decision.action == SWITCH:
        new = [decision.access]
    elif decision.action == START_SPLIT:
        new = active + [decision.access] if decision.access not in active else active
    elif decision.action == STOP_SPLIT:
        new = [a for a in active if a != decision.access]
    else:
        raise PolicyError(f"unknown decision {decision.action!r}")
    for a in conn.accesses:
        conn.set_access_priority(a, "normal" if a in new else "backup")
    return new


class SessionManager:
    """Per-flow decision loop (SMF role) for flows on a converged core."""

    def __init__(self, sim: Simulator, framework: PolicyFramework, topology, window: int = DEFAULT_WINDOW):
        self.sim = sim
        self.framework = framework
        self.topology = topology
        self.window = window
        self.flows: dict[int, dict] = {}
        self.log: list[dict] = []

    def access_states(self, monitor: FlowMonitor | None = None) -> dict[str, AccessState]:
        now = self.sim.now
        out = {}
        for a, acc in self.topology.accesses.items():
            if monitor is not None:
                state = monitor.access_state(a, now, acc.up)
            else:
                state = AccessState(a, acc.up)
            out[a] = state
        return out

    def admit(self, flow_id: int, service_class: str, direction: str, conn) -> Enforcement:
        enf = enforce(service_class, direction, self.framework.tables, self.access_states())
        apply_enforcement(enf, conn)
        monitor = FlowMonitor(flow_id, self.window, self.sim.now)
        pipe = conn.pipe(direction)

        def on_ack(_pipe, sf, info):
            monitor.record(sf.access_id, self.sim.now, info.acked_bytes, info.rtt_sample)

        def on_loss(_pipe, sf, kind):
            monitor.record(sf.access_id, self.sim.now, 0, None, 1)

        pipe.ack_observers.append(on_ack)
        pipe.loss_observers.append(on_loss)
        self.flows[flow_id] = {
            "conn": conn, "monitor": monitor, "policy": enf.policy, "active": list(enf.normal),
            "last": None, "service_class": service_class, "direction": direction, "done": False,
        }
        self.log.append({"time_us": self.sim.now, "flow": flow_id, "action": "admit",
                         "access": ",".join(enf.normal), "reason": enf.location})
        self.sim.schedule_in(self.window, self._tick, flow_id)
        return enf

    def finish(self, flow_id: int) -> None:
        if flow_id in self.flows:
            self.flows[flow_id]["done"] = True

    def _tick(self, flow_id: int) -> None:
        flow = self.flows[flow_id]
        if flow["done"]:
            return
        self.step(flow_id)
        self.sim.schedule_in(self.window, self._tick, flow_id)

    def on_link_state(self, access_id: str, state: str) -> None:
        for flow_id, flow in self.flows.items():
            if not flow["done"]:
                self.step(flow_id, immediate=True)

    def step(self, flow_id: int, immediate: bool = False) -> Decision:
        flow = self.flows[flow_id]
        # the UPF table governs downlink flows, so re-read it each step
        policy = self.framework.tables[enforcement_point(flow["direction"])].lookup(flow["service_class"])
        flow["policy"] = policy
        states = self.access_states(flow["monitor"])
        decision = evaluate(flow["monitor"], policy, states, flow["active"], self.sim.now,
                            flow["last"], self.window)
        if decision.action != STAY:
            flow["active"] = apply_decision(decision, flow["conn"], flow["active"])
            flow["last"] = self.sim.now
            self.log.append({"time_us": self.sim.now, "flow": flow_id, "action": decision.action,
                             "access": decision.access, "reason": decision.reason})
        return decision
