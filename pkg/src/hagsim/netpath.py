"""Access-network paths: store-and-forward links with drop-tail queues, and the
three hybrid-access topologies built from them."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .simcore import ARRIVAL, Simulator, ms
from .trace import DELIVER, DROP, SEND, Trace

FRAME_BYTES = 1500
HEADER_BYTES = 60
ACK_BYTES = 60

ENDPOINT_MPTCP = "endpoint-mptcp"
HAG = "hag"
CONVERGED_CORE = "converged-core"
MODES = (ENDPOINT_MPTCP, HAG, CONVERGED_CORE)

UP = "up"
DOWN = "down"

# data, setup, handshake, control, ack
PACKET_KINDS = ("handshake", "setup", "data", "ack", "control")


def serialization_delay(size_bytes: int, rate_bps: float) -> int:
    """Whole microseconds needed to clock ``size_bytes`` onto a ``rate_bps`` link (ceil)."""
    if rate_bps <= 0:
        raise ValueError("rate_bps must be positive")
    # integer path avoids float ceil surprises on exact multiples
    if float(rate_bps).is_integer():
        return -(-size_bytes * 8 * 1_000_000 // int(rate_bps))
    return math.ceil(size_bytes * 8 * 1_000_000 / rate_bps)


def bdp_queue_bytes(rate_bps: float, rtt_us: int) -> int:
    """One bandwidth-delay product, rounded up to whole frames (never below one frame)."""
    bdp = rate_bps * rtt_us / 8 / 1_000_000
    frames = max(1, math.ceil(bdp / FRAME_BYTES))
    return frames * FRAME_BYTES


@dataclass
class LinkSpec:
    rate_bps: float
    owd: int
    queue_cap_bytes: int
    loss_prob: float = 0.0
    state: str = UP

    def __post_init__(self):
        if self.rate_bps <= 0:
            raise ValueError("rate_bps must be > 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        if self.queue_cap_bytes < FRAME_BYTES:
            raise ValueError(f"queue_cap_bytes must hold at least one {FRAME_BYTES} B frame")
        if self.owd < 0:
            raise ValueError("owd must be nonnegative")
        if self.state not in (UP, DOWN):
            raise ValueError(f"state must be 'up' or 'down', got {self.state!r}")


class Packet:
    """One frame on the wire. ``dest`` is the handler that receives it at the far end."""

    __slots__ = (
        "flow_id", "subflow_id", "conn_seq", "sf_seq", "size_bytes", "payload",
        "kind", "sent_at", "dest", "ack_no", "conn_ack", "echo", "info",
    )

    def __init__(self, flow_id, subflow_id, kind, size_bytes, dest, sent_at=0,
                 conn_seq=-1, sf_seq=-1, payload=0):
        self.flow_id = flow_id
        self.subflow_id = subflow_id
        self.kind = kind
        self.size_bytes = size_bytes
        self.dest = dest
        self.sent_at = sent_at
        self.conn_seq = conn_seq
        self.sf_seq = sf_seq
        self.payload = payload
        self.ack_no = -1
        self.conn_ack = -1
        self.echo = None
        self.info = None

    def __repr__(self):
        return (f"Packet({self.kind} flow={self.flow_id} sf={self.subflow_id} "
                f"conn_seq={self.conn_seq} size={self.size_bytes})")


@dataclass
class QueueState:
    occupied_bytes: int = 0
    busy_until: int = 0


class Link:
    """Drop-tail FIFO transmitter followed by a fixed propagation delay.

    ``extra_delay`` folds in per-packet processing at core nodes and the anchor
    that sit behind this link; they add latency but no queueing.
    """

    def __init__(self, sim: Simulator, name: str, spec: LinkSpec, trace: Trace,
                 extra_delay: int = 0, rng=None):
        self.sim = sim
        self.name = name
        self.spec = spec
        self.trace = trace
        self.extra_delay = extra_delay
        self.rng = rng if rng is not None else sim.rng(f"loss:{name}")
        self.queue = QueueState()
        self._backlog: deque = deque()  # (done_at, size) of frames not yet clocked out
        self._inflight: deque = deque()  # [event_id, pkt, lost] in arrival order
        self.state_listeners: list[Callable[[Link, str], None]] = []
        self.injected_bytes = 0
        self.delivered_bytes = 0
        self.dropped_bytes = 0
        self.delivered_payload = 0

    @property
    def up(self) -> bool:
        return self.spec.state == UP

    def _drain(self, now: int) -> None:
        backlog = self._backlog
        q = self.queue
        while backlog and backlog[0][0] <= now:
            q.occupied_bytes -= backlog.popleft()[1]

    def occupied(self, now: int | None = None) -> int:
        self._drain(self.sim.now if now is None else now)
        return self.queue.occupied_bytes

    def inflight_bytes(self) -> int:
        return sum(entry[1].size_bytes for entry in self._inflight)

    def enqueue(self, pkt: Packet, now: int | None = None) -> bool:
        sim = self.sim
        if now is None:
            now = sim.now
        size = pkt.size_bytes
        self.injected_bytes += size
        spec = self.spec
        trace = self.trace
        if spec.state != UP:
            self.dropped_bytes += size
            trace.log(now, self.name, DROP, pkt.kind, size, pkt.flow_id, pkt.subflow_id, pkt.conn_seq)
            return False
        self._drain(now)
        q = self.queue
        if q.occupied_bytes + size > spec.queue_cap_bytes:
            self.dropped_bytes += size
            trace.log(now, self.name, DROP, pkt.kind, size, pkt.flow_id, pkt.subflow_id, pkt.conn_seq)
            return False
        start = q.busy_until if q.busy_until > now else now
        done = start + serialization_delay(size, spec.rate_bps)
        q.busy_until = done
        q.occupied_bytes += size
        self._backlog.append((done, size))
        lost = spec.loss_prob > 0.0 and self.rng.random() < spec.loss_prob
        entry = [0, pkt, lost]
        entry[0] = sim.schedule(done + spec.owd + self.extra_delay, self._arrive, entry, ARRIVAL)
        self._inflight.append(entry)
        trace.log(now, self.name, SEND, pkt.kind, size, pkt.flow_id, pkt.subflow_id, pkt.conn_seq)
        return True

    def _arrive(self, entry) -> None:
        head = self._inflight.popleft()
        assert head is entry, "link delivery must be FIFO"
        pkt = entry[1]
        now = self.sim.now
        if entry[2]:
            self.dropped_bytes += pkt.size_bytes
            self.trace.log(now, self.name, DROP, pkt.kind, pkt.size_bytes, pkt.flow_id, pkt.subflow_id, pkt.conn_seq)
            return
        self.delivered_bytes += pkt.size_bytes
        self.delivered_payload += pkt.payload
        self.trace.log(now, self.name, DELIVER, pkt.kind, pkt.size_bytes, pkt.flow_id, pkt.subflow_id, pkt.conn_seq)
        pkt.dest(pkt)

    def set_state(self, state: str, now: int | None = None) -> str:
        if state not in (UP, DOWN):
            raise ValueError(f"unknown link state {state!r}")
        now = self.sim.now if now is None else now
        previous = self.spec.state
        if previous == state:
            return previous
        self.spec.state = state
        if state == DOWN:
            for entry in self._inflight:
                self.sim.cancel(entry[0])
                pkt = entry[1]
                self.dropped_bytes += pkt.size_bytes
                self.trace.log(now, self.name, DROP, pkt.kind, pkt.size_bytes, pkt.flow_id, pkt.subflow_id, pkt.conn_seq)
            self._inflight.clear()
            self._backlog.clear()
            self.queue = QueueState(0, now)
        else:
            self.queue = QueueState(0, now)
        for listener in self.state_listeners:
            listener(self, state)
        return previous


def set_link_state(link: Link, state: str, now: int | None = None) -> str:
    return link.set_state(state, now)


@dataclass
class Access:
    """One access network: an uplink/downlink pair and the core nodes behind it."""

    access_id: str
    ul: Link
    dl: Link
    core_nodes: list[str] = field(default_factory=list)

    @property
    def up(self) -> bool:
        return self.ul.up and self.dl.up

    def set_state(self, state: str, now: int | None = None) -> str:
        previous = self.ul.spec.state
        self.ul.set_state(state, now)
        self.dl.set_state(state, now)
        return previous

    def rtt_floor(self) -> int:
        return self.ul.spec.owd + self.dl.spec.owd + self.ul.extra_delay + self.dl.extra_delay


@dataclass
class Topology:
    mode: str
    anchor: str
    anchor_proc_delay: int
    accesses: dict[str, Access]
    atsss_attached: bool = False

    def access(self, access_id: str) -> Access:
        return self.accesses[access_id]

    def links(self) -> list[Link]:
        out = []
        for acc in self.accesses.values():
            out.extend((acc.ul, acc.dl))
        return out


# core nodes on each access's way to the anchor, per mode
_CORE_CHAINS = {
    ENDPOINT_MPTCP: {"fbb": [], "mbb": []},
    HAG: {"fbb": ["bng"], "mbb": ["pgw"]},
    CONVERGED_CORE: {"fbb": ["n3iwf"], "mbb": []},
}
_ANCHORS = {ENDPOINT_MPTCP: "server", HAG: "hag", CONVERGED_CORE: "upf"}


def build_topology(sim: Simulator, mode: str, links: dict[str, tuple[LinkSpec, LinkSpec]],
                   trace: Trace, node_delay: int = ms(0.5)) -> Topology:
    """Build a topology from ``{access_id: (uplink_spec, downlink_spec)}``.

    Every core node and the anchor add ``node_delay`` per packet in each direction.
    Access ids other than fbb/mbb get the fixed-access chain of the mode.
    """
    if mode not in MODES:
        raise ValueError(f"unknown topology mode {mode!r}; expected one of {MODES}")
    if not links:
        raise ValueError("topology needs at least one access")
    accesses = {}
    for access_id, pair in links.items():
        if len(pair) != 2:
            raise ValueError(f"access {access_id!r} needs an uplink and a downlink spec")
        ul_spec, dl_spec = pair
        chain = list(_CORE_CHAINS[mode].get(access_id, _CORE_CHAINS[mode]["fbb"]))
        extra = node_delay * (len(chain) + 1)
        ul = Link(sim, f"{access_id}.ul", ul_spec, trace, extra)
        dl = Link(sim, f"{access_id}.dl", dl_spec, trace, extra)
        accesses[access_id] = Access(access_id, ul, dl, chain)
    return Topology(mode, _ANCHORS[mode], node_delay, accesses, atsss_attached=mode == CONVERGED_CORE)
