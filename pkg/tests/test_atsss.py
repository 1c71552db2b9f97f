import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from hagsim.atsss import (
    SMF, SPLIT, STAY, START_SPLIT, STEER, STOP_SPLIT, SWITCH, UE, UPF, AccessState, AtsssPolicy,
    FlowMonitor, MonitorSample, PolicyError, PolicyFramework, PolicyTable, SteeringFailure,
    Thresholds, convey_policy, enforce, evaluate, load_policies, monitor_update, select_access,
    violates,
)
from hagsim.simcore import Simulator, ms, seconds

FBB_MBB = ("fbb", "mbb")


def acc(a, rtt=None, thr=0.0, loss=None, up=True, samples=1):
    return AccessState(a, up, rtt, thr, loss, samples)


def test_steer_to_lowest_rtt_qualifier():
    pol = AtsssPolicy("urllc", STEER, FBB_MBB, Thresholds(max_rtt=ms(20)))
    assert select_access(pol, [acc("fbb", rtt=ms(13)), acc("mbb", rtt=ms(53))]) == ["fbb"]


def test_switch_falls_back_when_primary_too_slow():
    pol = AtsssPolicy("video", SWITCH, FBB_MBB, Thresholds(min_throughput_bps=5e6))
    assert select_access(pol, [acc("fbb", thr=1e6), acc("mbb", thr=18e6)]) == ["mbb"]


def test_split_returns_all_qualifiers():
    pol = AtsssPolicy("bulk", SPLIT, FBB_MBB)
    assert select_access(pol, [acc("fbb"), acc("mbb")]) == ["fbb", "mbb"]


def test_nothing_qualifies():
    pol = AtsssPolicy("urllc", STEER, FBB_MBB, Thresholds(max_rtt=ms(20)))
    with pytest.raises(SteeringFailure):
        select_access(pol, [acc("fbb", rtt=ms(30)), acc("mbb", rtt=ms(60))])


def test_down_access_never_selected():
    pol = AtsssPolicy("bulk", SPLIT, FBB_MBB)
    assert select_access(pol, [acc("fbb", up=False), acc("mbb")]) == ["mbb"]


def test_unmeasured_metrics_do_not_disqualify():
    th = Thresholds(min_throughput_bps=5e6, max_rtt=ms(20), max_loss_rate=0.01)
    assert not violates(th, AccessState("fbb"))


def test_policy_validation():
    with pytest.raises(PolicyError):
        AtsssPolicy("x", "balance", FBB_MBB)
    with pytest.raises(PolicyError):
        AtsssPolicy("x", STEER, ())
    with pytest.raises(PolicyError):
        Thresholds(max_rtt=-1)


def test_policy_round_trip():
    pol = AtsssPolicy("urllc", STEER, FBB_MBB, Thresholds(max_rtt=ms(20)), 0.2)
    assert AtsssPolicy.from_dict(pol.to_dict()) == pol


def test_load_policies_requires_default():
    with pytest.raises(PolicyError):
        load_policies([{"service_class": "bulk", "mode": "split", "access_priority": ["fbb"]}])
    with pytest.raises(PolicyError):
        load_policies([{"service_class": "default", "mode": "split"}])


def test_shipped_policy_file_loads():
    from importlib.resources import files

    entries = load_policies(str(files("hagsim") / "data" / "policies.json"))
    assert {"default", "bulk", "urllc", "video"} <= set(entries)


def test_table_lookup_falls_back_to_default():
    entries = {"default": AtsssPolicy("default", SPLIT, FBB_MBB)}
    table = PolicyTable(UE)
    table.install(entries, 1)
    assert table.lookup("gaming").service_class == "default"
    assert not table.install(entries, 1)


def test_monitor_throughput_over_window():
    mon = FlowMonitor(1, seconds(1))
    for i in range(10):
        mon.record("fbb", ms(100) * i + 1, 100_000)
    assert mon.access_state("fbb", ms(950)).measured_throughput_bps == pytest.approx(8e6)


def test_monitor_window_forgets_old_samples():
    mon = FlowMonitor(1, seconds(1))
    mon.record("fbb", ms(10), 1_000_000, rtt=ms(20))
    state = monitor_update(mon, MonitorSample("fbb", ms(1500), 0, ms(40)))
    assert state.measured_throughput_bps == 0
    assert state.measured_rtt == ms(40)


def test_monitor_rtt_is_smoothed():
    mon = FlowMonitor(1, seconds(1))
    mon.record("fbb", 1, rtt=800)
    mon.record("fbb", 2, rtt=1600)
    assert mon.access_state("fbb", 3).measured_rtt == 900


def _framework(sim, version_entries=None):
    entries = version_entries or {"default": AtsssPolicy("default", SPLIT, FBB_MBB)}
    return PolicyFramework(sim, entries, ms(53))


def test_convey_arrives_after_cp_delay():
    sim = Simulator()
    fw = _framework(sim)
    new = {"default": AtsssPolicy("default", STEER, FBB_MBB)}
    fw.update(new)
    assert fw.tables[SMF].version == 2
    sim.run_until(ms(52))
    assert fw.tables[UE].version == 1 and not fw.converged()
    sim.run_until(ms(53))
    assert fw.tables[UE].version == 2 and fw.tables[UPF].version == 2
    assert fw.converged()


def test_convey_is_idempotent():
    sim = Simulator()
    fw = _framework(sim)
    assert convey_policy(fw, UE) is None
    fw.update({"default": AtsssPolicy("default", STEER, FBB_MBB)})
    convey_policy(fw, UE)
    sim.run_until(ms(200))
    assert [d[1] for d in fw.deliveries].count(UE) == 1


def test_convey_rejects_smf_target():
    with pytest.raises(PolicyError):
        convey_policy(_framework(Simulator()), SMF)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 200), min_size=1, max_size=6), st.integers(0, 300))
def test_tables_converge_after_last_update(gaps_ms, extra_ms):
    sim = Simulator()
    fw = _framework(sim)
    modes = [STEER, SWITCH, SPLIT]
    t = 0
    for i, gap in enumerate(gaps_ms):
        t += ms(gap)
        sim.run_until(t)
        fw.update({"default": AtsssPolicy("default", modes[i % 3], FBB_MBB)})
    sim.run_until(t + ms(53) + ms(extra_ms))
    assert fw.converged()


def test_enforce_reads_direction_table():
    sim = Simulator()
    fw = _framework(sim)
    fw.tables[UE].install({"default": AtsssPolicy("default", STEER, ("mbb", "fbb"))}, 9)
    states = [acc("fbb"), acc("mbb")]
    up = enforce("bulk", "uplink", fw.tables, states)
    down = enforce("bulk", "downlink", fw.tables, states)
    assert up.location == UE and up.normal == ("mbb",) and up.backup == ("fbb",)
    assert down.location == UPF and down.normal == ("fbb", "mbb") and down.backup == ()


def test_enforce_unknown_direction():
    with pytest.raises(PolicyError):
        enforce("bulk", "sideways", _framework(Simulator()).tables, [acc("fbb")])


def test_evaluate_switches_away_from_down_access():
    pol = AtsssPolicy("video", SWITCH, FBB_MBB)
    d = evaluate(None, pol, [acc("fbb", up=False), acc("mbb")], ["fbb"], ms(10))
    assert (d.action, d.access) == (SWITCH, "mbb")


def test_evaluate_stops_split_on_down_access():
    pol = AtsssPolicy("bulk", SPLIT, FBB_MBB)
    d = evaluate(None, pol, [acc("fbb"), acc("mbb", up=False)], ["fbb", "mbb"], ms(10))
    assert (d.action, d.access) == (STOP_SPLIT, "mbb")


def test_evaluate_waits_for_full_window():
    pol = AtsssPolicy("urllc", STEER, FBB_MBB, Thresholds(max_rtt=ms(20)))
    mon = FlowMonitor(1, seconds(1), 0)
    states = [acc("fbb", rtt=ms(40)), acc("mbb", rtt=ms(10))]
    assert evaluate(mon, pol, states, ["fbb"], ms(500)).action == STAY
    d = evaluate(mon, pol, states, ["fbb"], seconds(1))
    assert (d.action, d.access) == (SWITCH, "mbb")
    assert evaluate(mon, pol, states, ["fbb"], seconds(1.5), seconds(1)).reason == "rate limited"


def test_evaluate_restarts_split_when_access_qualifies():
    pol = AtsssPolicy("bulk", SPLIT, FBB_MBB, Thresholds(max_rtt=ms(100)))
    d = evaluate(None, pol, [acc("fbb", rtt=ms(15)), acc("mbb", rtt=ms(55))], ["fbb"], seconds(2))
    assert (d.action, d.access) == (START_SPLIT, "mbb")


# -- fuzzing ---------------------------------------------------------------

thresholds = st.builds(
    Thresholds,
    st.one_of(st.none(), st.floats(0, 1e8)),
    st.one_of(st.none(), st.integers(0, 200_000)),
    st.one_of(st.none(), st.floats(0, 0.5)),
)
policies = st.builds(
    AtsssPolicy,
    st.just("fuzz"),
    st.sampled_from([STEER, SWITCH, SPLIT]),
    st.permutations(list(FBB_MBB)),
    thresholds,
    st.floats(0, 0.5),
)
access_states = st.tuples(*[
    st.builds(
        AccessState,
        st.just(a),
        st.booleans(),
        st.one_of(st.none(), st.integers(0, 300_000)),
        st.floats(0, 1e8),
        st.one_of(st.none(), st.floats(0, 1)),
        st.integers(0, 50),
    )
    for a in FBB_MBB
])


@settings(max_examples=1200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(policies, access_states, st.lists(st.sampled_from(FBB_MBB), max_size=2, unique=True))
def test_fuzz_no_flow_assigned_to_violating_access(pol, states, active):
    index = {s.access_id: s for s in states}
    try:
        chosen = select_access(pol, states)
    except SteeringFailure:
        assert all(violates(pol.thresholds, s) for s in states)
    else:
        assert chosen
        assert all(not violates(pol.thresholds, index[a]) for a in chosen)
    d = evaluate(None, pol, states, active, seconds(10))
    if d.action in (SWITCH, START_SPLIT):
        assert not violates(pol.thresholds, index[d.access])
        assert d.access not in active or d.action == SWITCH


@settings(max_examples=300, deadline=None)
@given(
    st.floats(0.05, 0.4),
    st.integers(5_000, 100_000),
    st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=5, max_size=60),
    st.sampled_from([STEER, SWITCH]),
)
def test_in_band_oscillation_switches_at_most_once(h, limit, wobble, mode):
    pol = AtsssPolicy("urllc", mode, FBB_MBB, Thresholds(max_rtt=limit), h)
    active = ["fbb"]
    last = None
    switches = 0
    for k, (wf, wm) in enumerate(wobble):
        now = seconds(1) * (k + 1)
        # both RTTs stay inside [limit*(1-h), limit*(1+h)]
        states = [acc("fbb", rtt=int(limit * (1 + h * wf))), acc("mbb", rtt=int(limit * (1 + h * wm)))]
        d = evaluate(None, pol, states, active, now, last, seconds(1))
        if d.action == SWITCH:
            switches += 1
            active = [d.access]
            last = now
    assert switches <= 1
