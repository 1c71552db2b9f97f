import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hagsim.netpath import (
    CONVERGED_CORE, DOWN, ENDPOINT_MPTCP, HAG, UP, Link, LinkSpec, Packet, bdp_queue_bytes,
    build_topology, serialization_delay, set_link_state,
)
from hagsim.simcore import Simulator, ms
from hagsim.trace import Trace


def make_link(rate=20e6, owd=ms(26.5), cap=15000, loss=0.0, seed=1):
    sim = Simulator(seed)
    trace = Trace()
    link = Link(sim, "mbb.dl", LinkSpec(rate, owd, cap, loss), trace)
    return sim, trace, link


def data(size=1500, seq=0, sink=None):
    return Packet(1, 0, "data", size, sink or (lambda p: None), conn_seq=seq, payload=size - 60)


def test_serialization_delay_examples():
    assert serialization_delay(1500, 20e6) == 600
    assert serialization_delay(1500, 76e6) == 158
    assert serialization_delay(0, 20e6) == 0


def test_serialization_delay_rejects_zero_rate():
    with pytest.raises(ValueError):
        serialization_delay(1500, 0)


@given(st.integers(0, 10**6), st.integers(1, 10**10))
def test_serialization_delay_is_ceiling(size, rate):
    d = serialization_delay(size, rate)
    assert d * rate >= size * 8 * 10**6
    assert (d - 1) * rate < size * 8 * 10**6 or d == 0


def test_bdp_queue_rounds_up_to_frames():
    # 20 Mbps * 53 ms = 132 500 B -> 89 frames
    assert bdp_queue_bytes(20e6, ms(53)) == 89 * 1500
    assert bdp_queue_bytes(1e3, 1) == 1500


def test_linkspec_invariants():
    with pytest.raises(ValueError):
        LinkSpec(0, 0, 1500)
    with pytest.raises(ValueError):
        LinkSpec(1e6, 0, 1500, loss_prob=1.5)
    with pytest.raises(ValueError):
        LinkSpec(1e6, 0, 1000)


def test_enqueue_on_empty_link_composes_delays():
    sim, trace, link = make_link()
    arrivals = []
    assert link.enqueue(data(sink=lambda p: arrivals.append(sim.now)), now=0)
    sim.run_until(ms(100))
    assert arrivals == [600 + 26_500]


def test_back_to_back_frames_queue_behind_each_other():
    sim, trace, link = make_link()
    arrivals = []
    for i in range(3):
        link.enqueue(data(seq=i, sink=lambda p: arrivals.append((p.conn_seq, sim.now))))
    sim.run_until(ms(100))
    assert arrivals == [(0, 27_100), (1, 27_700), (2, 28_300)]


def test_full_queue_tail_drops():
    sim, trace, link = make_link(cap=3000)
    assert link.enqueue(data(seq=0))
    assert link.enqueue(data(seq=1))
    assert not link.enqueue(data(seq=2))
    assert [r[2] for r in trace.records] == ["send", "send", "drop"]


def test_loss_prob_one_never_delivers():
    sim, trace, link = make_link(loss=1.0)
    got = []
    for i in range(5):
        sim.run_until(sim.now + 1000)
        link.enqueue(data(seq=i, sink=got.append))
    sim.run_until(ms(200))
    assert got == []
    assert sum(1 for r in trace.records if r[2] == "drop") == 5


def test_link_down_drops_in_flight_and_rejects():
    sim, trace, link = make_link(cap=15000)
    got = []
    for i in range(5):
        link.enqueue(data(seq=i, sink=got.append))
    assert set_link_state(link, DOWN) == UP
    assert sum(1 for r in trace.records if r[2] == "drop") == 5
    assert not link.enqueue(data(seq=9, sink=got.append))
    sim.run_until(ms(100))
    assert got == []
    link.set_state(UP)
    assert link.enqueue(data(seq=10, sink=got.append))
    sim.run_until(ms(200))
    assert [p.conn_seq for p in got] == [10]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 3000), st.integers(60, 1500)), min_size=1, max_size=120),
    st.floats(0, 0.3),
    st.integers(0, 2**32),
)
def test_conservation_fifo_and_rate(plan, loss, seed):
    sim, trace, link = make_link(rate=10e6, owd=ms(5), cap=6000, loss=loss, seed=seed)
    delivered = []
    t = 0
    for gap, size in plan:
        t += gap
        sim.run_until(t)
        link.enqueue(data(size, seq=len(delivered) * 0 + t, sink=delivered.append))
        assert link.injected_bytes == link.delivered_bytes + link.dropped_bytes + link.inflight_bytes()
        assert 0 <= link.occupied() <= link.spec.queue_cap_bytes
    sim.run_until(t + ms(500))
    assert link.injected_bytes == link.delivered_bytes + link.dropped_bytes
    # FIFO: deliveries come out in the order they were sent
    sends = [r for r in trace.records if r[2] == "send"]
    deliver_times = [r[0] for r in trace.records if r[2] == "deliver"]
    assert deliver_times == sorted(deliver_times)
    # never more than rate * window bits per 100 ms window (plus one frame in transit)
    window = ms(100)
    bins = {}
    for r in trace.records:
        if r[2] == "deliver":
            bins[r[0] // window] = bins.get(r[0] // window, 0) + r[4] * 8
    assert all(b <= 10e6 * 0.1 + 1500 * 8 for b in bins.values())
    assert len(sends) >= len(deliver_times)


def test_lossless_link_delivers_every_accepted_packet_once():
    sim, trace, link = make_link(cap=10**7)
    got = []
    for i in range(200):
        assert link.enqueue(data(seq=i, sink=lambda p: got.append(p.conn_seq)))
    sim.run_until(ms(1000))
    assert got == list(range(200))


def _links():
    return {
        "fbb": (LinkSpec(19e6, ms(6.5), 30000), LinkSpec(70e6, ms(6.5), 120000)),
        "mbb": (LinkSpec(5e6, ms(26.5), 30000), LinkSpec(20e6, ms(26.5), 135000)),
    }


def test_topology_modes_structure():
    sim = Simulator()
    hag = build_topology(sim, HAG, _links(), Trace())
    assert [len(a.core_nodes) for a in hag.accesses.values()] == [1, 1]
    assert hag.anchor == "hag" and not hag.atsss_attached
    ep = build_topology(sim, ENDPOINT_MPTCP, _links(), Trace())
    assert all("hag" not in a.core_nodes for a in ep.accesses.values())
    assert ep.anchor == "server"
    assert all(a.core_nodes == [] for a in ep.accesses.values())
    cc = build_topology(sim, CONVERGED_CORE, _links(), Trace())
    assert cc.anchor == "upf" and cc.atsss_attached
    # each extra core node adds its processing delay to the path
    assert hag.accesses["fbb"].rtt_floor() - ep.accesses["fbb"].rtt_floor() == 2 * ms(0.5)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        build_topology(Simulator(), "l3-tunnel", _links(), Trace())
