"""Multipath reliable transport.

Each direction of a connection is a :class:`ConnectionState`: a set of subflows
(one per access) running Reno-style AIMD whose congestion-avoidance increase is
coupled through the LIA ``alpha`` factor, a minRTT scheduler over a shared
connection-level byte stream, and the receiver's reassembly buffer.
:class:`Connection` pairs the two directions and runs the subflow handshakes.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .netpath import ACK_BYTES, CONVERGED_CORE, HEADER_BYTES, Link, Packet, Topology
from .simcore import Simulator, ms, seconds

MSS = 1440
INITIAL_CWND_SEGMENTS = 10
MIN_CWND_SEGMENTS = 2
DUPACK_THRESHOLD = 3
RTO_MIN = ms(200)
RTO_INITIAL = seconds(1)
RTO_MAX = seconds(60)
HANDSHAKE_BYTES = 60

SLOW_START = "slow-start"
CONGESTION_AVOIDANCE = "congestion-avoidance"
RECOVERY = "recovery"

NORMAL = "normal"
BACKUP = "backup"

STANDARD = "standard"
FAST = "fast"

TRIPLE_DUPACK = "triple-dupack"
RTO = "rto"


class TransportError(ValueError):
    pass


@dataclass(eq=False)
class SubflowState:
    """Sender side of one subflow.

    ``outstanding`` counts bytes sent and not yet cumulatively acked or declared
    lost; ``dup_credit`` is the bytes duplicate acks report as having left the
    network. ``inflight`` is their difference.
    """

    subflow_id: int
    access_id: str
    link: Link | None = None
    mss: int = MSS
    cwnd: float = INITIAL_CWND_SEGMENTS * MSS
    ssthresh: float = math.inf
    srtt: int = 0
    rttvar: int = 0
    rto: int = RTO_INITIAL
    outstanding: int = 0
    dup_credit: int = 0
    phase: str = SLOW_START
    priority: str = NORMAL
    up: bool = True
    established: bool = False
    snd_una: int = 0
    snd_nxt: int = 0
    dupacks: int = 0
    backoff: int = 1
    resend_idx: int = 0
    rto_deadline: int = 0
    rto_event: int | None = None
    # [sf_seq, conn_seq, size, kind, sent_at, out]
    segs: deque = field(default_factory=deque)
    history: list | None = None
    bytes_sent: int = 0
    retransmits: int = 0

    @property
    def inflight(self) -> int:
        credit = self.dup_credit
        return self.outstanding - credit if credit < self.outstanding else 0

    @property
    def usable(self) -> bool:
        return self.up and self.established

    def has_window(self) -> bool:
        return self.inflight + self.mss <= self.cwnd

    def reset(self, initial_cwnd: float) -> None:
        """Forget everything; used when the access underneath goes away."""
        self.cwnd = initial_cwnd
        self.ssthresh = math.inf
        self.srtt = self.rttvar = 0
        self.rto = RTO_INITIAL
        self.outstanding = self.dup_credit = 0
        self.phase = SLOW_START
        self.established = False
        self.snd_una = self.snd_nxt = 0
        self.dupacks = 0
        self.backoff = 1
        self.resend_idx = 0
        self.segs.clear()


@dataclass(frozen=True)
class AckInfo:
    subflow_id: int
    acked_bytes: int
    rtt_sample: int
    conn_cum_ack: int


def _alpha_from_ints(pairs: list[tuple[int, int]]) -> float:
    # alpha = total * max(c/r^2) / (sum c/r)^2, cleared of denominators so the
    # only rounding is the final int/int division
    prod = 1
    for _, r in pairs:
        prod *= r
    s = 0
    m = 0
    total = 0
    for c, r in pairs:
        k = prod // r
        s += c * k
        v = c * k * k
        if v > m:
            m = v
        total += c
    if s == 0:
        return 1.0
    return total * m / (s * s)


def _alpha_set(subflows: Iterable[SubflowState]) -> list[SubflowState]:
    est = [s for s in subflows if s.srtt > 0 and s.usable]
    coupled = [s for s in est if s.priority == NORMAL and s.phase != RECOVERY]
    return coupled or est


def lia_alpha(subflows: Iterable[SubflowState]) -> float:
    """Linked-increase aggressiveness factor over the coupled subflows.

    Only established subflows with an RTT sample count; backup subflows and those
    in loss recovery are left out unless nothing else remains. With no RTT
    sample at all the subflows run uncoupled (alpha = 1).
    """
    chosen = _alpha_set(subflows)
    if not chosen:
        return 1.0
    return _alpha_from_ints([(max(int(s.cwnd), 1), s.srtt) for s in chosen])


def pick_subflow(conn: "ConnectionState") -> int | None:
    ordered = conn.eligible_subflows()
    return ordered[0].subflow_id if ordered else None


class SubflowReceiver:
    __slots__ = ("rcv_nxt", "ooo")

    def __init__(self):
        self.rcv_nxt = 0
        self.ooo: dict[int, int] = {}

    def reset(self):
        self.rcv_nxt = 0
        self.ooo.clear()


class ConnectionState:
    """One direction of a multipath connection, sender and receiver halves.

    ``fwd`` maps access id to the link carrying data, ``rev`` to the link that
    carries the acks back.
    """

    def __init__(self, sim: Simulator, flow_id: int, fwd: dict[str, Link], rev: dict[str, Link],
                 mss: int = MSS, initial_cwnd_segments: int = INITIAL_CWND_SEGMENTS,
                 record_cwnd: bool = False, label: str = ""):
        self.sim = sim
        self.flow_id = flow_id
        self.label = label
        self.mss = mss
        self.initial_cwnd = float(initial_cwnd_segments * mss)
        self.subflows: list[SubflowState] = []
        self.fwd = fwd
        self.rev = rev
        for i, access_id in enumerate(fwd):
            sf = SubflowState(i, access_id, fwd[access_id], mss=mss, cwnd=self.initial_cwnd)
            if record_cwnd:
                sf.history = []
            self.subflows.append(sf)
        self.by_access = {sf.access_id: sf for sf in self.subflows}
        self.receivers = [SubflowReceiver() for _ in self.subflows]
        # sender stream: messages are laid end to end, segments never straddle two
        self.messages: list[tuple[int, int, str]] = []
        self.stream_end = 0
        self.next_conn_seq = 0
        self._msg_idx = 0
        self.reinject: deque = deque()
        self._reinjected: set[int] = set()
        self.conn_acked = 0
        # receiver
        self.delivered = 0
        self.recv_buffer: dict[int, int] = {}
        self._waiters: deque = deque()
        self.app_bytes = 0
        self.duplicate_bytes = 0
        # observers
        self.ack_observers: list[Callable] = []
        self.loss_observers: list[Callable] = []
        self.alpha = 1.0

    # ---- application side -------------------------------------------------

    def send_message(self, nbytes: int, kind: str = "data",
                     on_delivered: Callable[[int], None] | None = None) -> tuple[int, int]:
        if nbytes <= 0:
            raise TransportError("message must carry at least one byte")
        start = self.stream_end
        end = start + nbytes
        self.messages.append((start, end, kind))
        self.stream_end = end
        if on_delivered is not None:
            self._waiters.append((end, on_delivered))
        self.push()
        return start, end

    # ---- scheduler --------------------------------------------------------

    def eligible_subflows(self) -> list[SubflowState]:
        """Subflows allowed to send now, lowest smoothed RTT first."""
        normal = [s for s in self.subflows if s.priority == NORMAL and s.usable]
        pool = normal or [s for s in self.subflows if s.usable]
        ready = [s for s in pool if s.inflight + s.mss <= s.cwnd]
        if len(ready) > 1:
            ready.sort(key=lambda s: (s.srtt, s.subflow_id))
        return ready

    def _next_segment(self, sf: SubflowState):
        """(kind, conn_seq, size, resend_seg) for ``sf``, or None."""
        if sf.resend_idx < len(sf.segs):
            seg = sf.segs[sf.resend_idx]
            return seg[3], seg[1], seg[2], seg
        reinject = self.reinject
        while reinject:
            conn_seq, size, kind = reinject[0]
            if conn_seq + size <= self.conn_acked:
                reinject.popleft()
                self._reinjected.discard(conn_seq)
                continue
            return kind, conn_seq, size, None
        pos = self.next_conn_seq
        if pos >= self.stream_end:
            return None
        msgs = self.messages
        idx = self._msg_idx
        while msgs[idx][1] <= pos:
            idx += 1
        self._msg_idx = idx
        start, end, kind = msgs[idx]
        size = end - pos
        if size > sf.mss:
            size = sf.mss
        return kind, pos, size, None

    def push(self) -> int:
        sent = 0
        now = self.sim.now
        while True:
            progressed = False
            for sf in self.eligible_subflows():
                nxt = self._next_segment(sf)
                if nxt is None:
                    continue
                kind, conn_seq, size, seg = nxt
                if seg is not None:
                    sf.resend_idx += 1
                    seg[4] = now
                    seg[5] = True
                    sf.outstanding += size
                    sf.retransmits += 1
                    self._emit(sf, seg[0], conn_seq, size, kind, now)
                else:
                    if conn_seq == self.next_conn_seq:
                        self.next_conn_seq = conn_seq + size
                    else:
                        self.reinject.popleft()
                        self._reinjected.discard(conn_seq)
                    sf_seq = sf.snd_nxt
                    sf.snd_nxt = sf_seq + size
                    sf.segs.append([sf_seq, conn_seq, size, kind, now, True])
                    sf.resend_idx = len(sf.segs)
                    sf.outstanding += size
                    self._emit(sf, sf_seq, conn_seq, size, kind, now)
                sent += 1
                progressed = True
                break
            if not progressed:
                return sent

    def _emit(self, sf: SubflowState, sf_seq: int, conn_seq: int, size: int, kind: str, now: int) -> None:
        pkt = Packet(self.flow_id, sf.subflow_id, kind, size + HEADER_BYTES, self.on_receive,
                     now, conn_seq, sf_seq, size)
        sf.bytes_sent += size
        sf.link.enqueue(pkt, now)
        if sf.rto_event is None:
            self._arm_rto(sf, now)

    # ---- timers -----------------------------------------------------------

    def _arm_rto(self, sf: SubflowState, now: int) -> None:
        rto = sf.rto * sf.backoff
        if rto > RTO_MAX:
            rto = RTO_MAX
        sf.rto_deadline = now + rto
        if sf.rto_event is None:
            sf.rto_event = self.sim.schedule(sf.rto_deadline, self._rto_fire, sf)

    def _rto_fire(self, sf: SubflowState) -> None:
        sf.rto_event = None
        if not sf.segs:
            return
        now = self.sim.now
        if now < sf.rto_deadline:
            sf.rto_event = self.sim.schedule(sf.rto_deadline, self._rto_fire, sf)
            return
        if sf.backoff < 64:
            sf.backoff *= 2
        self.on_loss(sf.subflow_id, RTO)
        self._arm_rto(sf, now)
        self.push()

    # ---- congestion control -----------------------------------------------

    def on_ack(self, ack: AckInfo) -> SubflowState:
        sf = self.subflows[ack.subflow_id]
        acked = ack.acked_bytes
        if sf.phase == RECOVERY:
            # first new cumulative ack ends recovery; window stays at ssthresh
            sf.phase = CONGESTION_AVOIDANCE
            if sf.history is not None:
                sf.history.append(("ack", acked, sf.cwnd))
            return sf
        if sf.phase == SLOW_START:
            sf.cwnd += acked
            if sf.cwnd >= sf.ssthresh:
                sf.phase = CONGESTION_AVOIDANCE
        else:
            group = _alpha_set(self.subflows)
            if sf not in group:
                group.append(sf)
            if len(group) == 1:
                alpha = 1.0
                total = sf.cwnd
            else:
                alpha = _alpha_from_ints([(max(int(s.cwnd), 1), s.srtt or 1) for s in group])
                total = 0.0
                for s in group:
                    total += s.cwnd
            self.alpha = alpha
            coupled = alpha * acked * sf.mss / total
            uncoupled = acked * sf.mss / sf.cwnd
            sf.cwnd += coupled if coupled < uncoupled else uncoupled
        if sf.history is not None:
            sf.history.append(("ack", acked, sf.cwnd))
        return sf

    def on_loss(self, subflow_id: int, kind: str) -> SubflowState:
        sf = self.subflows[subflow_id]
        floor = MIN_CWND_SEGMENTS * sf.mss
        half = sf.cwnd / 2
        sf.ssthresh = half if half > floor else float(floor)
        if kind == TRIPLE_DUPACK:
            sf.cwnd = sf.ssthresh
            sf.phase = RECOVERY
        elif kind == RTO:
            sf.cwnd = float(floor)
            sf.phase = SLOW_START
            sf.dupacks = 0
            sf.dup_credit = 0
            sf.outstanding = 0
            for seg in sf.segs:
                seg[5] = False
            sf.resend_idx = 0
            self._reinject_unacked(sf)
        else:
            raise TransportError(f"unknown loss kind {kind!r}")
        if sf.history is not None:
            sf.history.append(("loss", kind, sf.cwnd))
        for obs in self.loss_observers:
            obs(self, sf, kind)
        return sf

    def _reinject_unacked(self, sf: SubflowState) -> None:
        seen = self._reinjected
        acked = self.conn_acked
        for seg in sf.segs:
            conn_seq = seg[1]
            if conn_seq + seg[2] <= acked or conn_seq in seen:
                continue
            seen.add(conn_seq)
            self.reinject.append((conn_seq, seg[2], seg[3]))

    # ---- packet handlers --------------------------------------------------

    def on_receive(self, pkt: Packet) -> int:
        """Receiver: reassemble, release the in-order prefix, ack on the arrival subflow."""
        rx = self.receivers[pkt.subflow_id]
        seq = pkt.sf_seq
        size = pkt.payload
        if seq == rx.rcv_nxt:
            nxt = seq + size
            ooo = rx.ooo
            while nxt in ooo:
                nxt += ooo.pop(nxt)
            rx.rcv_nxt = nxt
        elif seq > rx.rcv_nxt:
            rx.ooo.setdefault(seq, size)

        start = pkt.conn_seq
        end = start + size
        new = 0
        delivered = self.delivered
        if end <= delivered or start in self.recv_buffer:
            self.duplicate_bytes += size
        elif start <= delivered:
            buf = self.recv_buffer
            while end in buf:
                end = buf.pop(end)
            new = end - delivered
            self.delivered = end
            self.app_bytes += new
        else:
            self.recv_buffer[start] = end
        if new:
            waiters = self._waiters
            while waiters and waiters[0][0] <= self.delivered:
                _, cb = waiters.popleft()
                cb(self.sim.now)

        access_id = self.subflows[pkt.subflow_id].access_id
        ack = Packet(self.flow_id, pkt.subflow_id, "ack", ACK_BYTES, self._on_ack_packet, self.sim.now)
        ack.ack_no = rx.rcv_nxt
        ack.conn_ack = self.delivered
        ack.echo = pkt.sent_at
        self.rev[access_id].enqueue(ack)
        return new

    def _on_ack_packet(self, pkt: Packet) -> None:
        sf = self.subflows[pkt.subflow_id]
        if not sf.established:
            return
        now = self.sim.now
        if pkt.conn_ack > self.conn_acked:
            self.conn_acked = pkt.conn_ack
        ack_no = pkt.ack_no
        if ack_no > sf.snd_una:
            segs = sf.segs
            acked = 0
            popped = 0
            while segs and segs[0][0] + segs[0][2] <= ack_no:
                seg = segs.popleft()
                if seg[5]:
                    sf.outstanding -= seg[2]
                acked += seg[2]
                popped += 1
            sf.resend_idx = sf.resend_idx - popped if sf.resend_idx > popped else 0
            sf.snd_una = ack_no
            sf.dupacks = 0
            sf.dup_credit = 0
            rtt = now - pkt.echo
            self._rtt_sample(sf, rtt)
            sf.backoff = 1
            info = AckInfo(sf.subflow_id, acked, rtt, pkt.conn_ack)
            self.on_ack(info)
            for obs in self.ack_observers:
                obs(self, sf, info)
            if segs:
                self._arm_rto(sf, now)
            elif sf.rto_event is not None:
                self.sim.cancel(sf.rto_event)
                sf.rto_event = None
        elif ack_no == sf.snd_una and sf.segs:
            sf.dupacks += 1
            if sf.dup_credit + sf.mss <= sf.outstanding:
                sf.dup_credit += sf.mss
            if sf.dupacks == DUPACK_THRESHOLD and sf.phase != RECOVERY:
                self.on_loss(sf.subflow_id, TRIPLE_DUPACK)
                seg = sf.segs[0]
                if seg[5]:
                    seg[4] = now
                    sf.retransmits += 1
                    self._emit(sf, seg[0], seg[1], seg[2], seg[3], now)
        else:
            return
        self.push()

    def _rtt_sample(self, sf: SubflowState, rtt: int) -> None:
        if rtt <= 0:
            rtt = 1
        if sf.srtt == 0:
            sf.srtt = rtt
            sf.rttvar = rtt // 2
        else:
            err = rtt - sf.srtt
            sf.rttvar += ((err if err >= 0 else -err) - sf.rttvar) // 4
            sf.srtt += err // 8
            if sf.srtt <= 0:
                sf.srtt = 1
        rto = sf.srtt + 4 * sf.rttvar
        sf.rto = rto if rto > RTO_MIN else RTO_MIN

    # ---- control ----------------------------------------------------------

    def set_priority(self, subflow_id: int, priority: str) -> str:
        if not 0 <= subflow_id < len(self.subflows):
            raise TransportError(f"unknown subflow id {subflow_id}")
        if priority not in (NORMAL, BACKUP):
            raise TransportError(f"priority must be normal or backup, got {priority!r}")
        sf = self.subflows[subflow_id]
        previous = sf.priority
        sf.priority = priority
        if previous != priority:
            self.push()
        return previous

    def establish_subflow(self, access_id: str, rtt_sample: int) -> None:
        sf = self.by_access[access_id]
        if sf.established:
            return
        sf.established = True
        self._rtt_sample(sf, rtt_sample)
        self.push()

    def detach_subflow(self, access_id: str) -> None:
        """The access is gone: move its unacked data to the other subflows and reset it."""
        sf = self.by_access[access_id]
        self._reinject_unacked(sf)
        if sf.rto_event is not None:
            self.sim.cancel(sf.rto_event)
            sf.rto_event = None
        sf.reset(self.initial_cwnd)
        self.receivers[sf.subflow_id].reset()
        sf.up = False
        self.push()

    @property
    def complete(self) -> bool:
        return self.delivered >= self.stream_end


def on_ack(conn: ConnectionState, ack: AckInfo) -> SubflowState:
    return conn.on_ack(ack)


def on_loss(conn: ConnectionState, subflow_id: int, kind: str) -> SubflowState:
    return conn.on_loss(subflow_id, kind)


def on_receive(conn: ConnectionState, pkt: Packet) -> int:
    return conn.on_receive(pkt)


def set_subflow_priority(conn: "ConnectionState | Connection", subflow_id: int, priority: str) -> str:
    return conn.set_priority(subflow_id, priority)


class Connection:
    """Both directions of one multipath connection plus subflow setup.

    The client (UE/HCPE side) owns the uplinks as its sending side; the server
    (anchor side) sends on the downlinks. ``accesses`` lists the access ids the
    connection may use, primary first.
    """

    def __init__(self, sim: Simulator, flow_id: int, topology: Topology, accesses: list[str],
                 advertise_mode: str = STANDARD, initial_cwnd_segments: int = INITIAL_CWND_SEGMENTS,
                 record_cwnd: bool = False):
        if advertise_mode not in (STANDARD, FAST):
            raise TransportError(f"advertise_mode must be standard or fast, got {advertise_mode!r}")
        if advertise_mode == FAST and topology.mode != CONVERGED_CORE:
            raise TransportError("fast address advertisement needs the converged-core topology")
        if not accesses:
            raise TransportError("connection needs at least one access")
        for a in accesses:
            if a not in topology.accesses:
                raise TransportError(f"unknown access {a!r}")
        self.sim = sim
        self.flow_id = flow_id
        self.topology = topology
        self.accesses = list(accesses)
        self.advertise_mode = advertise_mode
        ul = {a: topology.accesses[a].ul for a in accesses}
        dl = {a: topology.accesses[a].dl for a in accesses}
        self.uplink = ConnectionState(sim, flow_id, ul, dl, initial_cwnd_segments=initial_cwnd_segments,
                                      record_cwnd=record_cwnd, label="uplink")
        self.downlink = ConnectionState(sim, flow_id, dl, ul, initial_cwnd_segments=initial_cwnd_segments,
                                        record_cwnd=record_cwnd, label="downlink")
        self.opened_at: int | None = None
        self.connected_at: int | None = None
        self.usable_at: dict[str, dict[str, int]] = {"client": {}, "server": {}}
        self._hs_timer: dict[str, int] = {}
        self._hs_pending: set[str] = set()
        self.on_connected: list[Callable[[int], None]] = []
        self.resets = 0

    def pipe(self, direction: str) -> ConnectionState:
        return self.uplink if direction == "uplink" else self.downlink

    # ---- handshakes -------------------------------------------------------

    def establish(self) -> None:
        """Open the connection at the current time."""
        if not any(self.topology.accesses[a].up for a in self.accesses):
            raise TransportError("no access is up")
        self.opened_at = self.sim.now
        if self.advertise_mode == FAST:
            for a in self.accesses:
                self._client_syn(a)
        else:
            primary = next(a for a in self.accesses if self.topology.accesses[a].up)
            self._client_syn(primary)

    def _hs_packet(self, access_id: str, what: str, dest) -> Packet:
        kind = "control" if what == "add_addr" else "handshake"
        pkt = Packet(self.flow_id, self.accesses.index(access_id), kind, HANDSHAKE_BYTES, dest, self.sim.now)
        pkt.info = (what, access_id)
        pkt.echo = self.sim.now
        return pkt

    def _retry_later(self, access_id: str, fn, delay: int) -> None:
        old = self._hs_timer.pop(access_id, None)
        if old is not None:
            self.sim.cancel(old)
        self._hs_timer[access_id] = self.sim.schedule_in(delay, fn, access_id)

    def _clear_retry(self, access_id: str) -> None:
        old = self._hs_timer.pop(access_id, None)
        if old is not None:
            self.sim.cancel(old)

    def _client_syn(self, access_id: str) -> None:
        acc = self.topology.accesses[access_id]
        self._hs_pending.add(access_id)
        acc.ul.enqueue(self._hs_packet(access_id, "syn", self._server_rx))
        self._retry_later(access_id, self._client_syn, RTO_INITIAL)

    def _server_syn(self, access_id: str) -> None:
        acc = self.topology.accesses[access_id]
        self._hs_pending.add(access_id)
        acc.dl.enqueue(self._hs_packet(access_id, "syn", self._client_rx))
        self._retry_later(access_id, self._server_syn, RTO_INITIAL)

    def _server_rx(self, pkt: Packet) -> None:
        what, a = pkt.info[0], pkt.info[1]
        acc = self.topology.accesses[a]
        if what == "syn":
            reply = self._hs_packet(a, "synack", self._client_rx)
            reply.info = ("synack", a, pkt.echo)
            acc.dl.enqueue(reply)
        elif what == "synack":
            # server-initiated join completes on the server side
            self._clear_retry(a)
            self._mark("server", a, self.sim.now - pkt.info[2])
            ack = self._hs_packet(a, "ack", self._client_rx)
            ack.info = ("ack", a, pkt.echo)
            acc.dl.enqueue(ack)
        elif what == "ack":
            self._mark("server", a, self.sim.now - pkt.info[2])
        elif what == "add_addr":
            for other in pkt.info[2]:
                if other not in self.usable_at["server"] and self.topology.accesses[other].up:
                    self._server_syn(other)

    def _client_rx(self, pkt: Packet) -> None:
        what, a = pkt.info[0], pkt.info[1]
        acc = self.topology.accesses[a]
        if what == "synack":
            self._clear_retry(a)
            first = self.connected_at is None
            self._mark("client", a, self.sim.now - pkt.info[2])
            ack = self._hs_packet(a, "ack", self._server_rx)
            ack.info = ("ack", a, pkt.echo)
            acc.ul.enqueue(ack)
            if first and self.advertise_mode == STANDARD:
                others = tuple(x for x in self.accesses if x != a)
                if others:
                    adv = self._hs_packet(a, "add_addr", self._server_rx)
                    adv.info = ("add_addr", a, others)
                    acc.ul.enqueue(adv)
        elif what == "syn":
            reply = self._hs_packet(a, "synack", self._server_rx)
            reply.info = ("synack", a, pkt.echo)
            acc.ul.enqueue(reply)
        elif what == "ack":
            self._mark("client", a, self.sim.now - pkt.info[2])

    def _mark(self, side: str, access_id: str, rtt: int) -> None:
        if access_id in self.usable_at[side] and self._side_pipe(side).by_access[access_id].established:
            return
        self.usable_at[side].setdefault(access_id, self.sim.now)
        pipe = self._side_pipe(side)
        pipe.by_access[access_id].up = self.topology.accesses[access_id].up
        pipe.establish_subflow(access_id, rtt)
        if side == "client" and self.connected_at is None:
            self.connected_at = self.sim.now
            for cb in self.on_connected:
                cb(self.sim.now)

    def _side_pipe(self, side: str) -> ConnectionState:
        return self.uplink if side == "client" else self.downlink

    # ---- access changes ---------------------------------------------------

    def access_down(self, access_id: str) -> None:
        if access_id not in self.accesses:
            return
        self._clear_retry(access_id)
        for pipe in (self.uplink, self.downlink):
            pipe.detach_subflow(access_id)
        for side in self.usable_at.values():
            side.pop(access_id, None)

    def access_up(self, access_id: str) -> None:
        if access_id not in self.accesses:
            return
        for pipe in (self.uplink, self.downlink):
            pipe.by_access[access_id].up = True
        if self.opened_at is not None:
            self._client_syn(access_id)

    def set_priority(self, subflow_id: int, priority: str) -> str:
        prev = self.uplink.set_priority(subflow_id, priority)
        self.downlink.set_priority(subflow_id, priority)
        return prev

    def set_access_priority(self, access_id: str, priority: str) -> str:
        return self.set_priority(self.accesses.index(access_id), priority)


def establish_connection(conn: Connection, topology: Topology | None = None,
                         advertise_mode: str | None = None) -> Connection:
    if advertise_mode is not None and advertise_mode != conn.advertise_mode:
        if advertise_mode == FAST and conn.topology.mode != CONVERGED_CORE:
            raise TransportError("fast address advertisement needs the converged-core topology")
        conn.advertise_mode = advertise_mode
    conn.establish()
    return conn
