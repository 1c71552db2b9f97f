"""Application workloads (setup exchanges + bulk transfer) and trace measurements."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .netpath import HEADER_BYTES
from .simcore import APP_STEP, Simulator, ms
from .trace import DELIVER, DROP, SEND, Trace

APPS = ("scp", "wget", "iperf")
DIRECTIONS = ("downlink", "uplink")
DEFAULT_TRANSFER_BYTES = 100_000_000
NEVER = None
PAYLOAD_KINDS = ("data", "setup")


@dataclass
class WorkloadSpec:
    app: str
    direction: str = "downlink"
    transfer_bytes: int = DEFAULT_TRANSFER_BYTES
    service_class: str = "default"
    start_at: int = 0
    flow_id: int = 1

    def __post_init__(self):
        if self.app not in APPS:
            raise ValueError(f"unknown app {self.app!r}; expected one of {APPS}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be downlink or uplink, got {self.direction!r}")
        if self.transfer_bytes <= 0:
            raise ValueError("transfer_bytes must be positive")
        if self.start_at < 0:
            raise ValueError("start_at must be nonnegative")


@dataclass(frozen=True)
class Exchange:
    name: str
    request_bytes: int
    response_bytes: int
    processing_delay: int
    group: str | None = None


@dataclass
class ExchangeGraph:
    """Setup exchanges and their dependencies.

    ``deps[name]`` lists the exchanges whose responses must arrive first.
    Members of a parallel group run concurrently only when several accesses
    are in use; on one access they run back to back.
    """

    nodes: list[Exchange]
    deps: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("exchange names must be unique")
        for name, before in self.deps.items():
            for b in before:
                if b not in names or name not in names:
                    raise ValueError(f"dependency {b!r} -> {name!r} names an unknown exchange")
        self.topological_order()

    def node(self, name: str) -> Exchange:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = defaultdict(list)
        for n in self.nodes:
            if n.group is not None:
                out[n.group].append(n.name)
        return dict(out)

    def topological_order(self) -> list[str]:
        indeg = {n.name: len(self.deps.get(n.name, ())) for n in self.nodes}
        ready = [n.name for n in self.nodes if indeg[n.name] == 0]
        order = []
        while ready:
            name = ready.pop(0)
            order.append(name)
            for n in self.nodes:
                if name in self.deps.get(n.name, ()):
                    indeg[n.name] -= 1
                    if indeg[n.name] == 0:
                        ready.append(n.name)
        if len(order) != len(self.nodes):
            raise ValueError("exchange graph has a cycle")
        return order

    def sequential(self) -> "ExchangeGraph":
        """Same exchanges, each parallel group chained in declaration order."""
        deps = {k: tuple(v) for k, v in self.deps.items()}
        for members in self.groups().values():
            for prev, cur in zip(members, members[1:]):
                deps[cur] = tuple(dict.fromkeys(deps.get(cur, ()) + (prev,)))
        return ExchangeGraph(list(self.nodes), deps)

    @property
    def total_processing(self) -> int:
        return sum(n.processing_delay for n in self.nodes)


def _chain(names: list[str]) -> dict[str, tuple[str, ...]]:
    return {b: (a,) for a, b in zip(names, names[1:])}


# scp: 4 key-exchange rounds, a 4-way group (auth/channel requests), 4 closing rounds
_SCP_SIZES = [
    (64, 64), (512, 512), (256, 320), (64, 64),
    (128, 96), (256, 128), (384, 96), (128, 64),
    (192, 128), (96, 96), (160, 128), (64, 96),
]


def setup_exchanges(app: str, overrides: dict | None = None) -> ExchangeGraph:
    """Setup graph for ``app``.

    ``overrides`` may set ``count``, ``processing_ms`` (total), and
    ``parallel_group`` (size of the concurrent group, scp only).
    """
    overrides = overrides or {}
    if app == "scp":
        count = overrides.get("count", 12)
        total_ms = overrides.get("processing_ms", 240.0)
        group_size = overrides.get("parallel_group", 4)
        lead = min(4, count)
    elif app == "wget":
        count = overrides.get("count", 2)
        total_ms = overrides.get("processing_ms", 10.0)
        group_size = overrides.get("parallel_group", 0)
        lead = count
    elif app == "iperf":
        count = overrides.get("count", 2)
        total_ms = overrides.get("processing_ms", 5.0)
        group_size = overrides.get("parallel_group", 0)
        lead = count
    else:
        raise ValueError(f"unknown app {app!r}; expected one of {APPS}")
    if count < 1:
        raise ValueError("an app needs at least one setup exchange")
    group_size = max(0, min(group_size, count - lead))
    per = ms(total_ms / count)
    sizes = _SCP_SIZES if app == "scp" else [(96, 160), (64, 128)]
    names = [f"{app}{i + 1}" for i in range(count)]
    group_names = set(names[lead:lead + group_size]) if group_size > 1 else set()
    nodes = [
        Exchange(name, sizes[i % len(sizes)][0], sizes[i % len(sizes)][1], per,
                 "g1" if name in group_names else None)
        for i, name in enumerate(names)
    ]
    if not group_names:
        return ExchangeGraph(nodes, _chain(names))
    head = names[:lead]
    group = names[lead:lead + group_size]
    tail = names[lead + group_size:]
    deps = _chain(head)
    for g in group:
        deps[g] = (head[-1],) if head else ()
        if not deps[g]:
            del deps[g]
    if tail:
        deps[tail[0]] = tuple(group)
        deps.update(_chain(tail))
    return ExchangeGraph(nodes, deps)


class AppSession:
    """Drives one workload over a connection: open, run the setup graph, transfer.

    Downlink transfers start at the server right after it answers the last
    setup request; uplink transfers start at the client once the last answer
    arrives.
    """

    def __init__(self, sim: Simulator, conn, workload: WorkloadSpec, graph: ExchangeGraph,
                 parallel: bool, on_complete: Callable[["AppSession"], None] | None = None):
        self.sim = sim
        self.conn = conn
        self.workload = workload
        self.graph = graph if parallel else graph.sequential()
        self.on_complete = on_complete
        self.done: set[str] = set()
        self.answered: set[str] = set()
        self.started: set[str] = set()
        self.bulk_started_at: int | None = None
        self.completed_at: int | None = None
        self.bulk_range: tuple[int, int] | None = None

    def start(self) -> None:
        self.sim.schedule(self.workload.start_at, self._open, None, APP_STEP)

    def _open(self, _) -> None:
        self.conn.on_connected.append(self._connected)
        self.conn.establish()

    def _connected(self, now: int) -> None:
        self._dispatch()

    def _dispatch(self) -> None:
        for name in self.graph.topological_order():
            if name in self.started:
                continue
            if all(d in self.done for d in self.graph.deps.get(name, ())):
                self.started.add(name)
                ex = self.graph.node(name)
                self.conn.uplink.send_message(ex.request_bytes, "setup",
                                              lambda t, ex=ex: self._request_arrived(ex))

    def _request_arrived(self, ex: Exchange) -> None:
        self.sim.schedule_in(ex.processing_delay, self._respond, ex, APP_STEP)

    def _respond(self, ex: Exchange) -> None:
        self.conn.downlink.send_message(ex.response_bytes, "setup",
                                        lambda t, ex=ex: self._response_arrived(ex))
        self.answered.add(ex.name)
        if self.workload.direction == "downlink" and len(self.answered) == len(self.graph.nodes):
            self._start_bulk(self.conn.downlink)

    def _response_arrived(self, ex: Exchange) -> None:
        self.done.add(ex.name)
        if len(self.done) == len(self.graph.nodes):
            if self.workload.direction == "uplink":
                self._start_bulk(self.conn.uplink)
            return
        self._dispatch()

    def _start_bulk(self, pipe) -> None:
        self.bulk_started_at = self.sim.now
        self.bulk_range = pipe.send_message(self.workload.transfer_bytes, "data", self._bulk_done)

    def _bulk_done(self, now: int) -> None:
        self.completed_at = now
        if self.on_complete is not None:
            self.on_complete(self)


# ---- measurement ----------------------------------------------------------

def _link_matches(name: str, link: str) -> bool:
    return name == link or name.split(".", 1)[0] == link


def measure_setup_time(trace: Trace | Iterable, link: str, start_at: int = 0,
                       flow: int | None = None) -> int | None:
    """Trigger-to-first-bulk-packet interval on ``link`` (a link name or an access id).

    None means the link never carried bulk data.
    """
    records = trace.records if isinstance(trace, Trace) else trace
    for rec in records:
        if rec[2] == SEND and rec[3] == "data" and _link_matches(rec[1], link):
            if flow is None or rec[5] == flow:
                return rec[0] - start_at
    return NEVER


@dataclass
class MetricSeries:
    interval: int
    rates: dict[str, list[float]]  # access id -> bps per interval
    setup_time: dict[str, int | None] = field(default_factory=dict)
    completion_time: int | None = None
    utilization: dict[str, float] = field(default_factory=dict)

    @property
    def aggregate(self) -> list[float]:
        n = max((len(v) for v in self.rates.values()), default=0)
        out = [0.0] * n
        for series in self.rates.values():
            for i, r in enumerate(series):
                out[i] += r
        return out

    def to_csv(self, path=None) -> str:
        accesses = sorted(self.rates)
        lines = ["interval_start_us," + ",".join(f"{a}_bps" for a in accesses) + ",aggregate_bps"]
        agg = self.aggregate
        for i in range(len(agg)):
            row = [str(i * self.interval)]
            for a in accesses:
                series = self.rates[a]
                row.append(f"{series[i] if i < len(series) else 0.0:.1f}")
            row.append(f"{agg[i]:.1f}")
            lines.append(",".join(row))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _payload(rec) -> int:
    return rec[4] - HEADER_BYTES if rec[3] in PAYLOAD_KINDS else 0


def sample_link_rate(trace: Trace | Iterable, interval: int = 1_000_000, direction: str | None = None,
                     t_end: int | None = None, payload_only: bool = True) -> MetricSeries:
    """Delivered payload bits per interval for each access.

    ``direction`` is "dl"/"ul" (or downlink/uplink) to keep one link per access;
    None sums both directions.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    suffix = None
    if direction is not None:
        suffix = {"downlink": "dl", "uplink": "ul"}.get(direction, direction)
    records = trace.records if isinstance(trace, Trace) else list(trace)
    bins: dict[str, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    last = 0
    seen_access = set()
    for rec in records:
        access, _, d = rec[1].partition(".")
        if suffix is not None and d != suffix:
            continue
        seen_access.add(access)
        if rec[2] != DELIVER:
            continue
        bits = (_payload(rec) if payload_only else rec[4]) * 8
        if bits:
            idx = rec[0] // interval
            bins[access][idx] += bits
            if idx > last:
                last = idx
    if t_end is not None:
        last = max(last, (t_end - 1) // interval)
    scale = 1_000_000 / interval
    rates = {}
    for access in sorted(seen_access):
        b = bins.get(access, {})
        rates[access] = [b.get(i, 0) * scale for i in range(last + 1)]
    return MetricSeries(interval, rates)


def utilization_ratio(fmc_mean_rate: float, standalone_mean_rate: float) -> float:
    if standalone_mean_rate <= 0:
        raise ValueError("standalone mean rate must be positive")
    return fmc_mean_rate / standalone_mean_rate


def steady_state_window(trace: Trace | Iterable, transfer_bytes: int, flow: int | None = None,
                        fraction: float = 0.95) -> tuple[int, int] | None:
    """(first bulk send, time ``fraction`` of the bulk bytes had arrived)."""
    records = trace.records if isinstance(trace, Trace) else trace
    first = None
    seen: set[int] = set()
    got = 0
    target = fraction * transfer_bytes
    for rec in records:
        if rec[3] != "data" or (flow is not None and rec[5] != flow):
            continue
        if rec[2] == SEND and first is None:
            first = rec[0]
        elif rec[2] == DELIVER and rec[7] not in seen:
            seen.add(rec[7])
            got += rec[4] - HEADER_BYTES
            if got >= target:
                return first, rec[0]
    return None


def mean_rates(trace: Trace | Iterable, window: tuple[int, int], direction: str | None = None,
               flow: int | None = None) -> dict[str, float]:
    """Mean delivered payload rate (bps) per access over [start, end]."""
    start, end = window
    suffix = None if direction is None else {"downlink": "dl", "uplink": "ul"}.get(direction, direction)
    records = trace.records if isinstance(trace, Trace) else trace
    bits: dict[str, int] = defaultdict(int)
    for rec in records:
        t = rec[0]
        if t < start:
            continue
        if t > end:
            break
        if rec[2] != DELIVER or rec[3] not in PAYLOAD_KINDS:
            continue
        if flow is not None and rec[5] != flow:
            continue
        access, _, d = rec[1].partition(".")
        if suffix is not None and d != suffix:
            continue
        bits[access] += (rec[4] - HEADER_BYTES) * 8
    span = max(end - start, 1) / 1_000_000
    return {a: b / span for a, b in sorted(bits.items())}


def completion_time(trace: Trace | Iterable, transfer_bytes: int, flow: int | None = None) -> int | None:
    """Time the last missing bulk byte arrived, or None."""
    window = steady_state_window(trace, transfer_bytes, flow, fraction=1.0)
    return None if window is None else window[1]


def drop_counts(trace: Trace | Iterable) -> dict[str, int]:
    records = trace.records if isinstance(trace, Trace) else trace
    out: dict[str, int] = defaultdict(int)
    for rec in records:
        if rec[2] == DROP:
            out[rec[1]] += 1
    return dict(sorted(out.items()))
