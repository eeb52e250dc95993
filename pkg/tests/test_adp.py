import statistics

import pytest
from hypothesis import given, settings, strategies as st

from wbanmac import SimConfig, Simulation
from wbanmac.channel import FrameKind
from wbanmac.common import Priority, RadioState
from wbanmac.engine import RngStream, ms
from wbanmac.mac.adp import (FsmError, PollDistribution, PollingPolicy, PollMode, ReceiverEvent,
                             ReceiverParams, ReceiverState, ReceiverTag, SenderEvent,
                             SenderParams, SenderState, SenderTag, concatenate,
                             draw_polling_interval, receiver_step, sender_step, update_policy)
from wbanmac.traffic import ArrivalHistory, Packet

E = SenderEvent
T = SenderTag


class FixedRng:
    """Stands in for a stream when a test needs a known backoff draw."""

    def __init__(self, value):
        self.value = value

    def randint_below(self, n):
        return min(self.value, n - 1)


def pkts(n, prio=Priority.NORMAL):
    return [Packet(i, 1, prio, 0) for i in range(1, n + 1)]


def test_deterministic_polling_interval():
    assert draw_polling_interval(PollingPolicy(), RngStream(1, 0, "p")) == ms(50)


def test_exponential_polling_interval_mean_and_floor():
    rng = RngStream(1, 0, "p")
    p = PollingPolicy(PollDistribution.EXPONENTIAL, ms(50))
    draws = [draw_polling_interval(p, rng) for _ in range(100_000)]
    assert 49_000 <= statistics.fmean(draws) <= 51_000
    assert min(draws) >= 1


def walk(events, cw=32, rng=None, params=SenderParams()):
    s = SenderState()
    now = 0
    log = []
    for ev, dt in events:
        now += dt
        s, acts = sender_step(s, ev, cw, now=now, rng=rng, params=params)
        log.append((s.tag, [a[0] for a in acts]))
    return s, log


def test_best_case_hop_is_52_ms():
    # sense (7) + strobe (10) + EA in the pause (10) + data (25), zero backoff
    s, log = walk([(E.QUEUED, 0), (E.CARRIER_IDLE, ms(7)), (E.STROBE_DONE, ms(10)),
                   (E.EA_RECEIVED, ms(10)), (E.DATA_DONE, ms(25))], rng=FixedRng(0))
    assert [tag for tag, _ in log] == [T.CARRIER_SENSE, T.STROBING, T.AWAIT_EA,
                                      T.SENDING_DATA, T.AWAIT_ACK]


def test_busy_channel_backs_off_then_senses_again():
    s, log = walk([(E.QUEUED, 0), (E.CARRIER_BUSY, ms(7))], rng=FixedRng(5))
    assert s.tag is T.BACKOFF and s.resense
    s, acts = sender_step(s, E.BACKOFF_DONE, 32, now=ms(12), rng=FixedRng(0))
    assert s.tag is T.CARRIER_SENSE
    assert list(acts) == [("sense",)]


def test_busy_channel_with_zero_backoff_senses_again():
    s, log = walk([(E.QUEUED, 0), (E.CARRIER_BUSY, ms(7))], rng=FixedRng(0))
    assert s.tag is T.CARRIER_SENSE
    assert log[-1][1] == ["sense"]


def test_no_ea_within_max_strobe_time_retries():
    params = SenderParams(max_strobe_time=ms(70))
    events = [(E.QUEUED, 0), (E.CARRIER_IDLE, ms(7)), (E.STROBE_DONE, ms(10))]
    for _ in range(3):
        events += [(E.PAUSE_ELAPSED, ms(10)), (E.STROBE_DONE, ms(10))]
    events += [(E.PAUSE_ELAPSED, ms(10))]
    s, log = walk(events, rng=FixedRng(0), params=params)
    assert s.tag is T.CARRIER_SENSE
    assert s.retries == 1
    assert log[-1][1] == ["retry", "sense"]
    # four strobes fit into the 70 ms train limit
    assert sum(1 for _, acts in log if "strobe" in acts) == 4


def test_retry_limit_drops():
    s = SenderState(T.AWAIT_ACK, retries=5)
    s, acts = sender_step(s, E.ACK_TIMEOUT, 32, now=0, params=SenderParams(retry_limit=5))
    assert s.tag is T.IDLE
    assert acts == [("drop",)]


def test_invalid_sender_event_raises():
    with pytest.raises(FsmError):
        sender_step(SenderState(), E.EA_RECEIVED, 32, now=0)


def test_poll_on_silent_channel_lasts_t_poll():
    r, acts = receiver_step(ReceiverState(), ReceiverEvent.WAKE, PollingPolicy(), now=0)
    assert r.tag is ReceiverTag.POLLING and acts == [("listen", ms(20))]
    r, acts = receiver_step(r, ReceiverEvent.POLL_TIMEOUT, PollingPolicy(), now=ms(20))
    assert r.tag is ReceiverTag.SLEEPING
    assert acts == [("sleep", ms(50))]


def test_receiver_lingers_t_add_after_ack():
    r = ReceiverState(ReceiverTag.SENDING_ACK)
    r, acts = receiver_step(r, ReceiverEvent.ACK_SENT, PollingPolicy(), now=0)
    assert r.tag is ReceiverTag.LINGERING
    assert acts == [("listen", ms(100))]


def test_strobe_during_linger_restarts_reception():
    r = ReceiverState(ReceiverTag.LINGERING, ms(100))
    r, acts = receiver_step(r, ReceiverEvent.STROBE_HEARD, PollingPolicy(), now=ms(40))
    assert r.tag is ReceiverTag.SENDING_EA
    assert acts == [("send_ea",)]


def test_burst_receiver_waits_for_last_frame():
    r = ReceiverState(ReceiverTag.RECEIVING)
    r, acts = receiver_step(r, ReceiverEvent.DATA_END, PollingPolicy(), now=0, last=False)
    assert r.tag is ReceiverTag.RECEIVING and acts == [("listen_data",)]
    r, acts = receiver_step(r, ReceiverEvent.DATA_END, PollingPolicy(), now=0, last=True)
    assert r.tag is ReceiverTag.SENDING_ACK


def test_always_on_receiver_never_sleeps():
    params = ReceiverParams(always_on=True)
    r, _ = receiver_step(ReceiverState(ReceiverTag.SENDING_ACK), ReceiverEvent.ACK_SENT,
                         PollingPolicy(), now=0, params=params)
    assert r.tag is ReceiverTag.ALWAYS_ON


def test_concatenation_examples():
    burst, ack = concatenate(pkts(3), 4)
    assert len(burst) == 3 and ack is FrameKind.BLOCK_ACK
    burst, ack = concatenate(pkts(1), 4)
    assert len(burst) == 1 and ack is FrameKind.ACK
    queue = pkts(5)
    burst, _ = concatenate(queue, 4)
    assert [p.id for p in burst] == [1, 2, 3, 4]
    with pytest.raises(ValueError):
        concatenate([], 4)


def _history(gaps):
    h = ArrivalHistory(10)
    h.extend(gaps)
    return h


def test_update_policy_follows_traffic_shape():
    p = PollingPolicy(PollDistribution.EXPONENTIAL)
    assert update_policy(_history([ms(2000)] * 10), p).distribution is PollDistribution.DETERMINISTIC
    rng = RngStream(5, 0, "h")
    poisson = _history([int(rng.exponential(2e6)) + 1 for _ in range(10)])
    assert update_policy(poisson, PollingPolicy()).distribution is PollDistribution.EXPONENTIAL
    one = _history([ms(2000)])
    assert update_policy(one, p) is p


def test_traffic_adaptive_mean_is_capped():
    p = PollingPolicy(mode=PollMode.TRAFFIC_ADAPTIVE)
    q = update_policy(_history([ms(2000)] * 10), p, mean_cap=ms(1000))
    assert q.mean == ms(1000)
    q = update_policy(_history([ms(300)] * 10), p, mean_cap=ms(1000))
    assert q.mean == ms(300)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(1, 8))
def test_concatenation_never_exceeds_burst(n, max_burst):
    queue = pkts(n)
    burst, ack = concatenate(queue, max_burst)
    assert len(burst) == min(n, max_burst)
    assert burst == queue[:len(burst)]
    assert (ack is FrameKind.BLOCK_ACK) == (len(burst) > 1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(list(SenderEvent)), max_size=30), st.integers(0, 31))
def test_sender_fsm_is_total_or_raises_cleanly(events, draw):
    s = SenderState()
    for i, ev in enumerate(events):
        try:
            s, acts = sender_step(s, ev, 32, now=i * 1000, rng=FixedRng(draw))
        except FsmError:
            continue
        assert 0 <= s.retries <= 5
        for a in acts:
            assert a[0] in {"sense", "backoff", "strobe", "await_ea", "send_data", "await_ack",
                            "dequeue", "drop", "retry", "requeue"}


# --------------------------------------------------------------------------
# node-level scenarios


def two_node(protocol="ADP", **over):
    cfg = SimConfig(protocol=protocol, n_nodes=1, cw_max=1, cw_urgent=1, **over)
    return cfg


def test_two_node_oracle_is_52_ms():
    for protocol in ("ADP", "ADP2"):
        cfg = two_node(protocol, stop_delivered=1)
        sim = Simulation(cfg, generators=[], scripts={(1, Priority.NORMAL): [ms(1000)]})
        assert sim.run().termination == "stopped"
        assert sim.records[0].delay == ms(52)


def test_relay_lingers_and_takes_second_packet_without_sleeping():
    cfg = SimConfig(protocol="ADP", n_nodes=2, cw_max=1, cw_urgent=1, stop_delivered=2,
                    polling_adaptive=False)
    sim = Simulation(cfg, generators=[], trace_frames=True,
                     scripts={(2, Priority.NORMAL): [ms(1000), ms(1080)]})
    sim.run()
    assert len(sim.records) == 2
    first_ack = min(s for s, _, kind, src, _, _, _ in sim.channel.frame_trace
                    if kind == "Ack" and src == 1)
    second_strobe_ea = [s for s, _, kind, src, _, _, _ in sim.channel.frame_trace
                        if kind == "EarlyAck" and src == 1 and s > first_ack]
    assert second_strobe_ea, "relay never answered the second strobe"
    # the relay answered the second strobe while lingering, without sleeping in between
    sleeps = [(s, e) for state, s, e, _ in sim.ledger.intervals[1]
              if state is RadioState.SLEEP and first_ack < s < second_strobe_ea[0]]
    assert sleeps == []


def test_adp_is_priority_blind():
    cfg = SimConfig(protocol="ADP", n_nodes=1, stop_delivered=2)
    sim = Simulation(cfg, generators=[], scripts={(1, Priority.NORMAL): [ms(1000)],
                                                  (1, Priority.URGENT): [ms(1001)]})
    sim.run()
    # FIFO: the normal packet goes first
    assert [r.priority for r in sim.records] == [Priority.NORMAL, Priority.URGENT]
    row = sim.summary()
    assert row.energy_per_delivered_urgent_mJ == row.energy_per_delivered_normal_mJ
