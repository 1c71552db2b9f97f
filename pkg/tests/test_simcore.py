import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hagsim.simcore import SchedulingError, Simulator, ms, rng_stream, seconds


def test_event_at_zero_fires_first():
    sim = Simulator()
    fired = []
    sim.schedule(5, fired.append, "late")
    sim.schedule(0, fired.append, "first")
    sim.run_until(10)
    assert fired == ["first", "late"]


def test_ties_fire_in_insertion_order():
    sim = Simulator()
    fired = []
    for tag in "abcde":
        sim.schedule(7, fired.append, tag)
    sim.run_until(7)
    assert fired == list("abcde")


def test_cancelled_event_never_fires():
    sim = Simulator()
    fired = []
    eid = sim.schedule(5, fired.append, "x")
    assert sim.cancel(eid) is True
    sim.run_until(100)
    assert fired == []


def test_cancel_unknown_and_fired():
    sim = Simulator()
    assert sim.cancel(12345) is False
    eid = sim.schedule(1, lambda _: None)
    sim.run_until(2)
    assert sim.cancel(eid) is False


def test_scheduling_in_the_past_fails_loudly():
    sim = Simulator()
    sim.run_until(100)
    with pytest.raises(SchedulingError):
        sim.schedule(99, lambda _: None)


def test_run_until_empty_queue_advances_clock():
    sim = Simulator()
    assert sim.run_until(seconds(10)) == 0
    assert sim.now == seconds(10)


def test_run_until_stops_at_horizon():
    sim = Simulator()
    for t in (1, 2, 3):
        sim.schedule(t, lambda _: None)
    assert sim.run_until(2) == 2
    assert sim.now == 2
    assert sim.run_until(5) == 1


def test_handler_can_schedule_at_same_time():
    sim = Simulator()
    fired = []

    def first(_):
        fired.append("first")
        sim.schedule(sim.now, fired.append, "second")

    sim.schedule(3, first)
    assert sim.run_until(3) == 2
    assert fired == ["first", "second"]


def test_stop_leaves_clock_at_last_event():
    sim = Simulator()
    sim.schedule(4, lambda _: sim.stop())
    sim.schedule(8, lambda _: None)
    sim.run_until(100)
    assert sim.now == 4


def test_run_until_rejects_past_horizon():
    sim = Simulator()
    sim.run_until(10)
    with pytest.raises(SchedulingError):
        sim.run_until(5)


def test_microsecond_helpers():
    assert ms(26.5) == 26_500
    assert seconds(1.5) == 1_500_000


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60, unique=True), st.randoms())
def test_fire_order_independent_of_insertion_order(times, rnd):
    def order(ts):
        sim = Simulator()
        fired = []
        for t in ts:
            sim.schedule(t, fired.append, t)
        sim.run_until(20_000)
        return fired

    shuffled = list(times)
    rnd.shuffle(shuffled)
    assert order(times) == order(shuffled) == sorted(times)


@given(st.lists(st.tuples(st.integers(0, 500), st.booleans()), max_size=80))
def test_clock_never_goes_backwards(plan):
    sim = Simulator()
    seen = []
    ids = []
    for t, cancel in plan:
        eid = sim.schedule(t, lambda _: seen.append(sim.now))
        if cancel:
            ids.append(eid)
    for eid in ids:
        sim.cancel(eid)
    sim.run_until(1000)
    assert seen == sorted(seen)
    assert len(seen) == len(plan) - len(ids)


def test_rng_stream_reproducible_and_independent():
    a = [rng_stream(7, "loss:fbb.dl").random() for _ in range(3)]
    b = rng_stream(7, "loss:fbb.dl")
    assert a[0] == b.random()
    assert rng_stream(7, "loss:mbb.dl").random() != rng_stream(7, "loss:fbb.dl").random()
    assert rng_stream(8, "loss:fbb.dl").random() != rng_stream(7, "loss:fbb.dl").random()


def test_rng_seed_must_be_u64():
    with pytest.raises(ValueError):
        rng_stream(-1, "x")
    with pytest.raises(ValueError):
        rng_stream(2**64, "x")
