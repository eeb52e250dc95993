import statistics

import pytest
from hypothesis import given, settings, strategies as st

from wbanmac import SimConfig, Simulation
from wbanmac.common import Priority
from wbanmac.engine import RngStream, ms
from wbanmac.mac.adp import PollDistribution, PollingPolicy, draw_polling_interval
from wbanmac.mac.adp2 import (NO_INTERRUPT, CwPolicy, InterruptDecision, InterruptReason,
                              NormalExchange, preempt, schedule_poll, select_cw,
                              should_interrupt)
from wbanmac.traffic import UrgentPrediction

U, N = Priority.URGENT, Priority.NORMAL


def test_select_cw_examples():
    p = CwPolicy(32, 8)
    assert select_cw(N, p) == 32
    assert select_cw(U, p) == 8
    assert select_cw(U, CwPolicy(32, 8, adaptive=True), deferrals=2) == 2
    assert select_cw(U, CwPolicy(32, 8, adaptive=True), deferrals=10) == 1


def test_cw_policy_validation():
    with pytest.raises(ValueError):
        CwPolicy(16, 32)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32), st.booleans(), st.integers(0, 40))
def test_urgent_window_never_exceeds_normal(a, b, adaptive, deferrals):
    lo, hi = sorted((a, b))
    p = CwPolicy(hi, lo, adaptive)
    assert 1 <= select_cw(U, p, deferrals) <= select_cw(N, p, deferrals) == hi


def test_should_interrupt_examples():
    t = ms(1000)
    pred = UrgentPrediction(t + ms(20), ms(10), ms(10), True)
    d = should_interrupt(t, t + ms(45), pred)
    assert d.interrupt and d.reason is InterruptReason.PREDICTED
    far = UrgentPrediction(t + ms(200), ms(10), ms(10), True)
    assert should_interrupt(t, t + ms(45), far) == NO_INTERRUPT
    assert should_interrupt(t, t + ms(45), UrgentPrediction()) == NO_INTERRUPT
    live = should_interrupt(t, t, UrgentPrediction(), urgent_strobe_heard=True)
    assert live.reason is InterruptReason.URGENT_STROBE


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 2 * 10**6),
       st.integers(0, 10**5))
def test_should_interrupt_iff_windows_overlap(now, busy, expected, guard):
    busy_until = now + busy
    pred = UrgentPrediction(expected, guard, guard, True)
    overlap = expected - guard <= busy_until and expected + guard >= now
    assert should_interrupt(now, busy_until, pred).interrupt == overlap


def test_decision_needs_reason():
    with pytest.raises(ValueError):
        InterruptDecision(True, InterruptReason.NONE)


def test_preempt_actions():
    live = InterruptDecision(True, InterruptReason.URGENT_STROBE)
    ex = NormalExchange(sender=3, received=(11, 12), at_strobe=False)
    assert preempt(live, ex, 0) == [("withhold", "ack"), ("send_ea", (11, 12))]
    pred = InterruptDecision(True, InterruptReason.PREDICTED)
    assert preempt(pred, NormalExchange(3), ms(500)) == [
        ("withhold", "ea"), ("send_interrupt", (), ms(500)), ("hold", ms(500))]
    assert preempt(NO_INTERRUPT, ex, 0) == []


class StubRng:
    def __init__(self, value):
        self.value = value

    def exponential(self, mean):
        return self.value


def test_schedule_poll_takes_earlier_wake():
    urgent = PollingPolicy(PollDistribution.EXPONENTIAL, ms(30))
    normal = PollingPolicy(PollDistribution.DETERMINISTIC, ms(50))
    assert schedule_poll(urgent, normal, StubRng(ms(12))) == ms(12)
    same = PollingPolicy()
    assert schedule_poll(same, same, None) == draw_polling_interval(same, None) == ms(50)


def test_schedule_poll_mean_below_both_policy_means():
    rng = RngStream(9, 0, "poll")
    urgent = PollingPolicy(PollDistribution.EXPONENTIAL, ms(30))
    normal = PollingPolicy(PollDistribution.EXPONENTIAL, ms(50))
    waits = [schedule_poll(urgent, normal, rng) for _ in range(10_000)]
    assert statistics.fmean(waits) <= min(urgent.mean, normal.mean)


# --------------------------------------------------------------------------
# node-level scenarios


def run(protocol, scripts, stop, **over):
    cfg = SimConfig(protocol=protocol, n_nodes=1, stop_delivered=stop, **over)
    sim = Simulation(cfg, generators=[], scripts=scripts, trace_frames=True)
    sim.run()
    return sim


def test_urgent_served_directly_on_idle_channel():
    sim = run("ADP2", {(1, U): [ms(1000)]}, 1, cw_max=1, cw_urgent=1)
    assert sim.records[0].delay == ms(52)
    assert not any(what == "withhold" for _, _, what, _ in sim.mac_log)


def test_live_interrupt_between_burst_frames():
    # four normal packets start a burst; an urgent one arrives during frame 2
    sim = run("ADP2", {(1, N): [ms(1000)] * 4, (1, U): [ms(1080)]}, 5)
    order = [r.priority for r in sim.records]
    assert order == [N, N, U, N, N]
    log = [(what, detail) for _, _, what, detail in sim.mac_log]
    assert ("withhold", "ack") in log
    # the EA for the urgent strobe acknowledged the two normal frames already received
    assert sim.summary().dropped == 0
    data = [row for row in sim.channel.frame_trace if row[2] == "Data"]
    assert all(e - s == ms(25) for s, e, *_ in data)
    assert len(data) == 5


def test_urgent_arrival_during_backoff_restarts_access():
    sim = run("ADP2", {(1, N): [ms(1000)], (1, U): [ms(1003)]}, 2)
    assert [r.priority for r in sim.records] == [U, N]
    assert any(what == "preempt_access" for _, _, what, _ in sim.mac_log)


def test_predicted_interrupt_defers_normal_until_window_closes():
    urgent = [ms(500), ms(1500), ms(2500), ms(3500)]
    sim = run("ADP2", {(1, U): urgent, (1, N): [ms(3420)] * 4}, 8)
    assert [r.priority for r in sim.records] == [U, U, U, U, N, N, N, N]
    log = [(what, detail) for _, _, what, detail in sim.mac_log]
    assert ("withhold", "ea") in log
    hold = int(next(d for w, d in log if w == "interrupted"))
    assert all(r.delivered_at > hold for r in sim.records if r.priority is N)
    assert [row[2] for row in sim.channel.frame_trace].count("Interrupt") == 1


def test_false_positive_costs_one_deferral():
    # the predicted urgent packet never comes; normal traffic resumes after the window
    urgent = [ms(500), ms(1500), ms(2500)]
    sim = run("ADP2", {(1, U): urgent, (1, N): [ms(3420)] * 4}, 7)
    normals = [r for r in sim.records if r.priority is N]
    assert len(normals) == 4
    hold = int(next(d for _, _, w, d in sim.mac_log if w == "interrupted"))
    assert min(r.delivered_at for r in normals) > hold
    assert [row[2] for row in sim.channel.frame_trace].count("Interrupt") == 1


def test_interruption_can_be_disabled():
    sim = run("ADP2", {(1, N): [ms(1000)] * 4, (1, U): [ms(1080)]}, 5,
              interrupt_urgent_strobe=False, interrupt_predicted=False)
    assert [r.priority for r in sim.records] == [N, N, N, N, U]
    assert not any(w == "withhold" for _, _, w, _ in sim.mac_log)


def test_full_network_exercises_interrupt_paths():
    cfg = SimConfig(protocol="ADP2", stop_delivered=300, mean_interval_urgent_s=2.0,
                    mean_interval_normal_s=2.0, seed=4)
    sim = Simulation(cfg, trace_frames=True)
    assert sim.run().termination == "stopped"
    kinds = {what for _, _, what, _ in sim.mac_log}
    assert {"withhold", "interrupt"} <= kinds
    row = sim.summary()
    assert row.avg_delay_urgent_ms < row.avg_delay_normal_ms
