"""Receiver-initiated duty-cycled polling MAC (baseline ADP-MAC).

Senders carrier-sense, back off and then transmit a train of short
preamble strobes; a receiver that wakes up and hears a strobe addressed to
it answers with an early ack (EA), takes a burst of concatenated data
frames, acknowledges it, and stays awake for ``t_add`` before sleeping
again for a polling interval drawn from its current policy.

The transition rules live in the pure functions :func:`sender_step` and
:func:`receiver_step`; :class:`AdpNode` executes the actions they return
on the shared channel.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, NamedTuple, Optional

from ..channel import Frame, FrameKind, Transmission
from ..common import Priority, RadioState
from ..engine import RngStream, ms
from ..traffic import (ArrivalHistory, Packet, Pattern, classify,
                       coefficient_of_variation)


_DO = {name: "_do_" + name for name in
       ("sense", "backoff", "strobe", "await_ea", "send_data", "await_ack",
        "dequeue", "drop", "requeue", "retry")}


class FsmError(RuntimeError):
    """An event arrived that the current state has no transition for."""


# --------------------------------------------------------------------------
# polling policy


class PollDistribution(str, Enum):
    DETERMINISTIC = "Deterministic"
    EXPONENTIAL = "Exponential"


class PollMode(str, Enum):
    FIXED_MEAN = "FixedMean"
    TRAFFIC_ADAPTIVE = "TrafficAdaptive"


@dataclass(frozen=True)
class PollingPolicy:
    distribution: PollDistribution = PollDistribution.DETERMINISTIC
    mean: int = ms(50)
    mode: PollMode = PollMode.FIXED_MEAN

    def __post_init__(self):
        if self.mean <= 0:
            raise ValueError("polling mean must be positive")


def draw_polling_interval(p: PollingPolicy, rng: RngStream) -> int:
    if p.distribution is PollDistribution.DETERMINISTIC:
        return p.mean
    return max(1, int(round(rng.exponential(p.mean))))


def update_policy(h: ArrivalHistory, p: PollingPolicy, threshold: float = 0.5,
                  mean_cap: int = ms(1000)) -> PollingPolicy:
    cv = coefficient_of_variation(h)
    if cv is None:
        return p
    dist = (PollDistribution.DETERMINISTIC if classify(cv, threshold) is Pattern.CBR
            else PollDistribution.EXPONENTIAL)
    mean = p.mean
    if p.mode is PollMode.TRAFFIC_ADAPTIVE:
        mean = max(1, min(int(round(h.mean())), mean_cap))
    if dist is p.distribution and mean == p.mean:
        return p
    return replace(p, distribution=dist, mean=mean)


# --------------------------------------------------------------------------
# concatenation


def concatenate(queue: Iterable[Packet], max_burst: int) -> tuple[list, FrameKind]:
    """Head-of-queue packets sent in one channel access and the ack that closes it."""
    burst = []
    for pkt in queue:
        if len(burst) == max_burst:
            break
        burst.append(pkt)
    if not burst:
        raise ValueError("cannot build a burst from an empty queue")
    return burst, (FrameKind.BLOCK_ACK if len(burst) > 1 else FrameKind.ACK)


def _without(queue: deque, pkts) -> deque:
    """``queue`` minus ``pkts``; bursts come off the head, so try that first."""
    ids = {p.id for p in pkts}
    if not ids:
        return queue
    while queue and queue[0].id in ids:
        ids.discard(queue.popleft().id)
    if ids:
        queue = deque(p for p in queue if p.id not in ids)
    return queue


# --------------------------------------------------------------------------
# sender state machine


class SenderTag(str, Enum):
    IDLE = "IdleQueueEmpty"
    CARRIER_SENSE = "CarrierSense"
    BACKOFF = "Backoff"
    STROBING = "Strobing"
    AWAIT_EA = "AwaitEA"
    SENDING_DATA = "SendingData"
    AWAIT_ACK = "AwaitAck"


class SenderEvent(str, Enum):
    QUEUED = "packet queued"
    CARRIER_IDLE = "carrier idle"
    CARRIER_BUSY = "carrier busy"
    BACKOFF_DONE = "slot elapsed"
    STROBE_DONE = "strobe sent"
    EA_RECEIVED = "EA received"
    PAUSE_ELAPSED = "pause elapsed"
    DATA_DONE = "data sent"
    ACK_RECEIVED = "ACK received"
    ACK_TIMEOUT = "timeout"
    ABORT = "abort"
    INTERRUPTED = "interrupted"


class SenderState(NamedTuple):
    tag: SenderTag = SenderTag.IDLE
    slots: int = 0
    resense: bool = False
    strobes: int = 0
    train_start: int = 0
    retries: int = 0


@dataclass(frozen=True)
class SenderParams:
    slot: int = ms(1)
    max_strobe_time: int = ms(70)
    retry_limit: int = 5


def sender_step(s: SenderState, event: SenderEvent, cw_max: int, *, now: int,
                rng: Optional[RngStream] = None,
                params: SenderParams = SenderParams()) -> tuple[SenderState, list]:
    """One transition of the sender; returns the new state and actions to run.

    Actions are tuples: ``("sense",)``, ``("backoff", us)``, ``("strobe",)``,
    ``("await_ea",)``, ``("send_data",)``, ``("await_ack",)``,
    ``("dequeue",)``, ``("drop",)`` and ``("requeue",)``.
    """
    tag = s.tag
    E = SenderEvent
    T = SenderTag

    if event is E.ABORT:
        return SenderState(T.IDLE, 0, False, 0, s.train_start, s.retries), []
    if event is E.INTERRUPTED:
        return SenderState(T.IDLE, 0, False, 0, s.train_start, s.retries), [("requeue",)]

    if tag is T.IDLE and event is E.QUEUED:
        return SenderState(T.CARRIER_SENSE, s.slots, False, 0, s.train_start, s.retries), _SENSE

    if tag is T.CARRIER_SENSE and (event is E.CARRIER_IDLE or event is E.CARRIER_BUSY):
        busy = event is E.CARRIER_BUSY
        slots = rng.randint_below(cw_max)
        if slots == 0:
            if busy:
                return SenderState(tag, 0, False, s.strobes, s.train_start, s.retries), _SENSE
            return _start_train(s, now)
        return (SenderState(T.BACKOFF, slots, busy, s.strobes, s.train_start, s.retries),
                [("backoff", slots * params.slot)])

    if tag is T.BACKOFF and event is E.BACKOFF_DONE:
        if s.resense:
            return SenderState(T.CARRIER_SENSE, 0, False, s.strobes, s.train_start, s.retries), _SENSE
        return _start_train(s, now)

    if tag is T.STROBING and event is E.STROBE_DONE:
        return s._replace(tag=T.AWAIT_EA), [("await_ea",)]

    if tag is T.AWAIT_EA and event is E.EA_RECEIVED:
        return s._replace(tag=T.SENDING_DATA), [("send_data",)]

    if tag is T.AWAIT_EA and event is E.PAUSE_ELAPSED:
        if now - s.train_start < params.max_strobe_time:
            return s._replace(tag=T.STROBING, strobes=s.strobes + 1), [("strobe",)]
        return _fail(s, params)

    if tag is T.SENDING_DATA and event is E.DATA_DONE:
        return s._replace(tag=T.AWAIT_ACK), [("await_ack",)]

    if tag is T.AWAIT_ACK and event is E.ACK_RECEIVED:
        return SenderState(), [("dequeue",)]

    if tag is T.AWAIT_ACK and event is E.ACK_TIMEOUT:
        return _fail(s, params)

    raise FsmError(f"sender in {tag.value} cannot handle {event.value!r}")


_SENSE = (("sense",),)


def _start_train(s: SenderState, now: int):
    return SenderState(SenderTag.STROBING, 0, False, 1, now, s.retries), (("strobe",),)


def _fail(s: SenderState, params: SenderParams):
    if s.retries + 1 > params.retry_limit:
        return SenderState(), [("drop",)]
    return (SenderState(tag=SenderTag.CARRIER_SENSE, retries=s.retries + 1),
            [("retry",), ("sense",)])


# --------------------------------------------------------------------------
# receiver state machine


class ReceiverTag(str, Enum):
    SLEEPING = "Sleeping"
    POLLING = "Polling"
    SENDING_EA = "SendingEA"
    RECEIVING = "ReceivingData"
    SENDING_ACK = "SendingAck"
    LINGERING = "Lingering"
    ALWAYS_ON = "AlwaysOn"


class ReceiverEvent(str, Enum):
    WAKE = "wake timer"
    POLL_TIMEOUT = "poll timer"
    STROBE_HEARD = "strobe heard"
    EA_SENT = "EA sent"
    DATA_END = "data frame end"
    DATA_LOST = "data lost"
    ACK_SENT = "ack sent"
    LINGER_TIMEOUT = "linger timer"
    FRAME_BEGIN = "frame begins"


class ReceiverState(NamedTuple):
    tag: ReceiverTag = ReceiverTag.SLEEPING
    until: int = 0
    extended: bool = False


@dataclass(frozen=True)
class ReceiverParams:
    t_poll: int = ms(20)
    t_add: int = ms(100)
    strobe_period: int = ms(20)
    always_on: bool = False


_CAN_ANSWER = (ReceiverTag.POLLING, ReceiverTag.LINGERING, ReceiverTag.ALWAYS_ON)


def receiver_step(r: ReceiverState, event: ReceiverEvent, policy: PollingPolicy, *, now: int,
                  rng: Optional[RngStream] = None, params: ReceiverParams = ReceiverParams(),
                  last: bool = True, activity: bool = False) -> tuple[ReceiverState, list]:
    """One transition of the receiver.

    Actions: ``("listen", us)``, ``("sleep", us)``, ``("send_ea",)``,
    ``("listen_data",)``, ``("send_ack",)`` and ``("hold_for_frame",)``.
    """
    tag = r.tag
    E = ReceiverEvent
    T = ReceiverTag

    if tag is T.SLEEPING and event is E.WAKE:
        return ReceiverState(T.POLLING, now + params.t_poll), [("listen", params.t_poll)]

    if tag is T.POLLING and event is E.POLL_TIMEOUT:
        if activity and not r.extended:
            return (ReceiverState(T.POLLING, now + params.strobe_period, True),
                    [("listen", params.strobe_period)])
        return _sleep(policy, now, rng)

    if (tag in _CAN_ANSWER or tag is T.RECEIVING) and event is E.STROBE_HEARD:
        # a strobe from the current sender during reception starts a new exchange
        return ReceiverState(T.SENDING_EA), [("send_ea",)]

    if tag is T.SENDING_EA and event is E.EA_SENT:
        return ReceiverState(T.RECEIVING), [("listen_data",)]

    if tag is T.RECEIVING and event is E.DATA_END:
        if last:
            return ReceiverState(T.SENDING_ACK), [("send_ack",)]
        return ReceiverState(T.RECEIVING), [("listen_data",)]

    if tag in (T.RECEIVING, T.SENDING_ACK) and event in (E.DATA_LOST, E.ACK_SENT):
        if params.always_on:
            return ReceiverState(T.ALWAYS_ON), [("listen", 0)]
        return ReceiverState(T.LINGERING, now + params.t_add), [("listen", params.t_add)]

    if tag in (T.LINGERING, T.POLLING, T.ALWAYS_ON) and event is E.FRAME_BEGIN:
        return r, [("hold_for_frame",)]

    if tag is T.LINGERING and event is E.LINGER_TIMEOUT:
        return _sleep(policy, now, rng)

    raise FsmError(f"receiver in {tag.value} cannot handle {event.value!r}")


def draw_sleep(policy, rng: Optional[RngStream]) -> int:
    """Sleep length for one policy, or the shortest draw over a tuple of policies."""
    if isinstance(policy, PollingPolicy):
        return draw_polling_interval(policy, rng)
    return min(draw_polling_interval(p, rng) for p in policy)


def _sleep(policy, now: int, rng: Optional[RngStream]):
    interval = draw_sleep(policy, rng)
    return ReceiverState(ReceiverTag.SLEEPING, now + interval), [("sleep", interval)]


# --------------------------------------------------------------------------
# node


class AdpNode:
    """One radio running both the sender and the receiver role of ADP-MAC.

    The radio is half duplex, so the roles take turns: an answered strobe
    pre-empts the node's own carrier sense or backoff, and a poll that
    comes due while the node is sending is served right after the access.
    """

    distinguishes_priority = False

    def __init__(self, sim, node_id: int):
        cfg = sim.config
        self.sim = sim
        self.id = node_id
        self.engine = sim.engine
        self.channel = sim.channel
        self.cfg = cfg
        self.t = sim.timings
        topo = sim.topology
        self.is_sink = node_id == topo.sink
        self.next_hop = None if self.is_sink else topo.next_hop(node_id)
        self.upstream = topo.upstream(node_id)
        self.sender = SenderState()
        self.receiver = ReceiverState(ReceiverTag.ALWAYS_ON if self.is_sink else ReceiverTag.SLEEPING)
        self.sparams = SenderParams(slot=ms(cfg.slot_ms), max_strobe_time=cfg.max_strobe_us,
                                    retry_limit=cfg.retry_limit)
        self.rparams = ReceiverParams(t_poll=ms(cfg.t_poll_ms), t_add=ms(cfg.t_add_ms),
                                      strobe_period=self.t.t_pre + self.t.t_pre_pause,
                                      always_on=self.is_sink)
        self.rng_backoff = sim.rng(node_id, "backoff")
        self.rng_poll = sim.rng(node_id, "poll")
        self.history = ArrivalHistory(cfg.cv_window)
        self.policy = PollingPolicy(PollDistribution.DETERMINISTIC, ms(cfg.t_pi_ms),
                                    PollMode(cfg.polling_mode))
        self.queue: deque = deque()
        self.burst: list = []
        self.burst_ack = FrameKind.ACK
        self.burst_index = 0
        self.tx_timer = None
        self.rx_timer = None
        self.wake_ev = None
        self.poll_pending = False
        self.hearing: Optional[Transmission] = None
        self.timer_expired = False
        self.poll_activity = False
        self.rx_from: Optional[int] = None
        self.rx_watchdog = None
        self.rx_received: list = []
        self.rx_klass = Priority.NONE
        self.seen: set = set()
        self._acked_ids: set = set()
        self.backoff_since = 0
        self.channel.attach(node_id, self)

    # ------------------------------------------------------------ lifecycle

    def start(self) -> None:
        if self.is_sink:
            self.channel.set_radio_state(self.id, RadioState.LISTEN)
            return
        # stagger the first wake-ups so polls are not phase-locked
        first = self.rng_poll.randint_below(max(1, self.policy.mean + self.rparams.t_poll))
        self.channel.set_radio_state(self.id, RadioState.SLEEP)
        self.wake_ev = self.engine.after(first, self._on_wake, kind="wake", target=self.id)

    def log(self, what: str, detail: str = "") -> None:
        self.sim.mac_event(self.id, what, detail)

    @property
    def sending(self) -> bool:
        return self.sender.tag is not SenderTag.IDLE

    @property
    def receiving_exchange(self) -> bool:
        return self.receiver.tag in (ReceiverTag.SENDING_EA, ReceiverTag.RECEIVING,
                                     ReceiverTag.SENDING_ACK)

    # ------------------------------------------------------------- queueing

    def enqueue(self, pkt: Packet) -> None:
        self._store(pkt)
        self._kick()

    def _store(self, pkt: Packet) -> None:
        self.queue.append(pkt)

    def _kick(self) -> None:
        """Start a channel access if the radio is free to do so."""
        if self.is_sink or self.sending or not self._has_queued():
            return
        tag = self.receiver.tag
        if tag is ReceiverTag.SLEEPING or (tag is ReceiverTag.LINGERING and self._hearing_now() is None):
            if tag is ReceiverTag.LINGERING:
                self._cancel_rx_timer()
                self.receiver = ReceiverState(ReceiverTag.SLEEPING)
                self._ensure_wake()
            self._sender_event(SenderEvent.QUEUED)

    def _has_queued(self) -> bool:
        return bool(self.queue)

    def _select_burst(self) -> None:
        self.burst, self.burst_ack = concatenate(self.queue, self.cfg.max_burst)

    @property
    def burst(self) -> list:
        return self._burst

    @burst.setter
    def burst(self, pkts: list) -> None:
        self._burst = pkts
        self._klass = pkts[0].priority if pkts else Priority.NONE

    def _burst_klass(self) -> Priority:
        return self._klass

    def _strobe_priority(self) -> Priority:
        return Priority.NONE

    def _cw(self) -> int:
        return self.cfg.cw_max

    def _remove_from_queue(self, pkts) -> None:
        self.queue = _without(self.queue, pkts)

    # --------------------------------------------------------------- sender

    def _sender_event(self, event: SenderEvent) -> None:
        before = self.sender
        self.sender, actions = sender_step(before, event, self._cw(), now=self.engine.now,
                                           rng=self.rng_backoff, params=self.sparams)
        if event is SenderEvent.QUEUED:
            self._select_burst()
        for act in actions:
            getattr(self, _DO[act[0]])(*act[1:])
        if self.sender.tag is SenderTag.IDLE and before.tag is not SenderTag.IDLE:
            self._after_access()

    def _do_sense(self) -> None:
        klass = self._klass
        self.tx_timer = self.channel.carrier_sense(self.id, self._on_sense, tag=klass)
        self.channel.retag(self.id, klass)

    def _on_sense(self, busy: bool) -> None:
        self.tx_timer = None
        self._sender_event(SenderEvent.CARRIER_BUSY if busy else SenderEvent.CARRIER_IDLE)

    def _do_backoff(self, duration: int) -> None:
        self.channel.set_radio_state(self.id, RadioState.LISTEN, self._burst_klass())
        self.backoff_since = self.engine.now
        self.tx_timer = self.engine.after(duration, self._on_backoff_done, kind="backoff", target=self.id)

    def _on_backoff_done(self) -> None:
        self.tx_timer = None
        if self.cfg.backoff_sense and not self.sender.resense:
            # the radio kept listening while counting down
            if self.channel.busy_between(self.backoff_since, self.engine.now - self.t.t_detect):
                self.sender = self.sender._replace(resense=True)
        self._sender_event(SenderEvent.BACKOFF_DONE)

    def _do_strobe(self) -> None:
        if self.sender.strobes == 1:
            # the burst is built when the channel is won, so it takes late arrivals too
            self._select_burst()
        f = Frame(FrameKind.PREAMBLE_STROBE, self.id, self.next_hop, self.t.t_pre,
                  priority=self._strobe_priority(), burst=len(self.burst), klass=self._burst_klass())
        self.channel.begin_transmission(self.id, f, tag=self._burst_klass())

    def _do_await_ea(self) -> None:
        self.channel.set_radio_state(self.id, RadioState.LISTEN, self._burst_klass())
        self.tx_timer = self.engine.after(self.t.t_pre_pause, self._on_pause_elapsed,
                                          kind="pause", target=self.id)

    def _on_pause_elapsed(self) -> None:
        self.tx_timer = None
        self._sender_event(SenderEvent.PAUSE_ELAPSED)

    def _do_send_data(self) -> None:
        self.burst_index = 0
        self._send_next_data()

    def _send_next_data(self) -> None:
        pkt = self.burst[self.burst_index]
        more = self.burst_index + 1 < len(self.burst)
        f = Frame(FrameKind.DATA, self.id, self.next_hop, self._data_airtime(pkt),
                  priority=self._strobe_priority(), packets=(pkt,), more=more,
                  klass=self._burst_klass())
        self.channel.begin_transmission(self.id, f, tag=self._burst_klass())

    def _data_airtime(self, pkt: Packet) -> int:
        return self.t.t_data

    def _on_data_sent(self, frame: Frame) -> None:
        self.burst_index += 1
        if frame.more:
            self._send_next_data()
        else:
            self._sender_event(SenderEvent.DATA_DONE)

    def _do_await_ack(self) -> None:
        self.channel.set_radio_state(self.id, RadioState.LISTEN, self._burst_klass())
        self.tx_timer = self.engine.after(self.t.t_ack, self._on_ack_timeout, kind="ack_timeout",
                                          target=self.id)

    def _on_ack_timeout(self) -> None:
        self.tx_timer = None
        self._sender_event(SenderEvent.ACK_TIMEOUT)

    def _do_dequeue(self) -> None:
        acked = self._acked_ids
        done = [p for p in self.burst if p.id in acked]
        self._remove_from_queue(done)
        self.burst = []

    def _do_retry(self) -> None:
        for p in self.burst:
            p.retransmissions += 1
        self._select_burst()

    def _do_drop(self) -> None:
        self._remove_from_queue(self.burst)
        self.sim.drop(self.burst, self.id)
        self.burst = []

    def _do_requeue(self) -> None:
        self.burst = []

    def _abort_access(self) -> None:
        if self.tx_timer is not None:
            self.engine.cancel(self.tx_timer)
            self.tx_timer = None
        self.sender, _ = sender_step(self.sender, SenderEvent.ABORT, self._cw(), now=self.engine.now)
        self.burst = []

    def _after_access(self) -> None:
        """The sender went idle: serve a pending poll, resend, or sleep."""
        if self.receiving_exchange or self.receiver.tag is not ReceiverTag.SLEEPING:
            return
        if self.poll_pending:
            self.poll_pending = False
            self._begin_poll()
            return
        if self._has_queued():
            self._sender_event(SenderEvent.QUEUED)
            return
        self.channel.set_radio_state(self.id, RadioState.SLEEP)
        self._ensure_wake()

    # ------------------------------------------------------------- receiver

    def _receiver_event(self, event: ReceiverEvent, **info) -> None:
        self.receiver, actions = receiver_step(self.receiver, event, self._poll_policy(),
                                               now=self.engine.now, rng=self.rng_poll,
                                               params=self.rparams, **info)
        for act in actions:
            getattr(self, "_rx_" + act[0])(*act[1:])

    def _poll_policy(self) -> PollingPolicy:
        return self.policy

    def _ensure_wake(self) -> None:
        if self.is_sink:
            return
        if self.wake_ev is None or not self.wake_ev.pending:
            interval = draw_sleep(self._poll_policy(), self.rng_poll)
            self.wake_ev = self.engine.after(interval, self._on_wake, kind="wake", target=self.id)

    def _on_wake(self) -> None:
        self.wake_ev = None
        if self.sending:
            self.poll_pending = True
            return
        if self.receiver.tag is not ReceiverTag.SLEEPING:
            return
        self._begin_poll()

    def _begin_poll(self) -> None:
        if self.wake_ev is not None:
            self.engine.cancel(self.wake_ev)
            self.wake_ev = None
        self.poll_activity = self.channel.in_progress_from(self.channel.neighbors[self.id]) is not None
        self.timer_expired = False
        self._receiver_event(ReceiverEvent.WAKE)

    def _rx_listen(self, duration: int) -> None:
        self.channel.set_radio_state(self.id, RadioState.LISTEN)
        self._cancel_rx_timer()
        if duration > 0:
            self.rx_timer = self.engine.after(duration, self._on_rx_timer, kind="rx_timer", target=self.id)

    def _cancel_rx_timer(self) -> None:
        if self.rx_timer is not None:
            self.engine.cancel(self.rx_timer)
            self.rx_timer = None

    def _on_rx_timer(self) -> None:
        self.rx_timer = None
        if self._hearing_now() is not None:
            self.timer_expired = True
            return
        self._rx_timeout()

    def _rx_timeout(self) -> None:
        self.timer_expired = False
        tag = self.receiver.tag
        if tag is ReceiverTag.POLLING:
            activity = self.poll_activity
            self.poll_activity = False
            if not activity and self._has_queued() and not self.sending:
                self.receiver = ReceiverState(ReceiverTag.SLEEPING)
                self._ensure_wake()
                self._sender_event(SenderEvent.QUEUED)
                return
            self._receiver_event(ReceiverEvent.POLL_TIMEOUT, activity=activity)
        elif tag is ReceiverTag.LINGERING:
            if self._has_queued() and not self.sending:
                self.receiver = ReceiverState(ReceiverTag.SLEEPING)
                self._ensure_wake()
                self._sender_event(SenderEvent.QUEUED)
                return
            self._receiver_event(ReceiverEvent.LINGER_TIMEOUT)

    def _rx_sleep(self, interval: int) -> None:
        self._cancel_rx_timer()
        self.channel.set_radio_state(self.id, RadioState.SLEEP)
        if self.wake_ev is not None:
            self.engine.cancel(self.wake_ev)
        self.wake_ev = self.engine.after(interval, self._on_wake, kind="wake", target=self.id)
        if self._has_queued() and not self.sending:
            self._sender_event(SenderEvent.QUEUED)

    def _rx_hold_for_frame(self) -> None:
        pass

    def _can_answer(self, strobe: Frame) -> bool:
        if self.receiver.tag in _CAN_ANSWER:
            return not self.sending
        if self.receiver.tag is ReceiverTag.SLEEPING and self.sender.tag in (
                SenderTag.CARRIER_SENSE, SenderTag.BACKOFF):
            return True
        return False

    def _answer_strobe(self, strobe: Frame) -> None:
        if self.sending:
            self._abort_access()
            self.poll_pending = False
        if self.receiver.tag is ReceiverTag.SLEEPING:
            # the radio was already listening for its own access
            self.receiver = ReceiverState(ReceiverTag.POLLING)
        self._cancel_rx_timer()
        self.rx_from = strobe.src
        self.rx_received = []
        self.rx_klass = strobe.klass
        self._receiver_event(ReceiverEvent.STROBE_HEARD)

    def _rx_send_ea(self) -> None:
        f = Frame(FrameKind.EARLY_ACK, self.id, self.rx_from, self.t.t_ea, priority=Priority.NONE)
        self.channel.begin_transmission(self.id, f, tag=self.rx_klass)

    def _rx_listen_data(self) -> None:
        self.channel.set_radio_state(self.id, RadioState.LISTEN, self.rx_klass)
        tx = self.channel.starting_now_from(self.rx_from)
        if tx is not None:
            # the sender started in the same microsecond our own frame ended
            self.hearing = tx
            return
        self._arm_watchdog()

    def _arm_watchdog(self) -> None:
        if self.rx_watchdog is not None:
            self.engine.cancel(self.rx_watchdog)
        self.rx_watchdog = self.engine.after(self._data_gap_limit(), self._on_rx_watchdog,
                                             kind="rx_watchdog", target=self.id)

    def _data_gap_limit(self) -> int:
        return self.t.t_detect

    def _on_rx_watchdog(self) -> None:
        self.rx_watchdog = None
        tx = self._hearing_now()
        if tx is not None and tx.frame.src == self.rx_from:
            return
        self._on_data_missing()

    def _on_data_missing(self) -> None:
        self._receiver_event(ReceiverEvent.DATA_LOST)

    def _rx_send_ack(self) -> None:
        kind = FrameKind.BLOCK_ACK if len(self.rx_received) > 1 else FrameKind.ACK
        f = Frame(kind, self.id, self.rx_from, self.t.t_ack, acked=tuple(self.rx_received))
        self.channel.begin_transmission(self.id, f, tag=self.rx_klass)

    def _accept(self, frame: Frame) -> None:
        now = self.engine.now
        for pkt in frame.packets:
            self.rx_received.append(pkt.id)
            if pkt.id in self.seen:
                continue
            self.seen.add(pkt.id)
            pkt.hops += 1
            pkt.hop_times.append(now)
            self._observe_arrival(pkt, now)
            if self.is_sink:
                self.sim.deliver(pkt)
            else:
                self._store(pkt)

    def _observe_arrival(self, pkt: Packet, now: int) -> None:
        self.history.observe(now)
        if self.cfg.polling_adaptive:
            self.policy = update_policy(self.history, self.policy, self.cfg.cv_threshold,
                                        ms(self.cfg.polling_mean_cap_ms))

    # ------------------------------------------------------ channel callbacks

    def _hearing_now(self) -> Optional[Transmission]:
        """The frame this radio is currently receiving, if it will get its end."""
        tx = self.hearing
        if tx is None:
            return None
        r = self.channel.radios[self.id]
        if (tx not in self.channel.active or not r.state.listening
                or r.listen_since is None or r.listen_since > tx.start):
            self.hearing = None
            return None
        return tx

    def on_frame_start(self, tx: Transmission) -> None:
        if self._hearing_now() is None:
            self.hearing = tx
        if self.receiver.tag in (ReceiverTag.POLLING, ReceiverTag.LINGERING):
            self._receiver_event(ReceiverEvent.FRAME_BEGIN)
        if self.receiver.tag is ReceiverTag.RECEIVING and tx.frame.src == self.rx_from:
            if self.rx_watchdog is not None:
                self.engine.cancel(self.rx_watchdog)
                self.rx_watchdog = None
        self._on_frame_start_hook(tx)

    def _on_frame_start_hook(self, tx: Transmission) -> None:
        pass

    def on_frame_end(self, tx: Transmission, intact: bool) -> None:
        if self.hearing is tx:
            self.hearing = None
        f = tx.frame
        if intact and f.dst == self.id:
            self._handle_frame(f)
        elif not intact and self.receiver.tag is ReceiverTag.RECEIVING and f.src == self.rx_from:
            self._on_data_corrupted()
        else:
            self._overheard(f, intact)
        if self.timer_expired and self.hearing is None and self.receiver.tag in (
                ReceiverTag.POLLING, ReceiverTag.LINGERING):
            self._rx_timeout()

    def _on_data_corrupted(self) -> None:
        if self.rx_watchdog is not None:
            self.engine.cancel(self.rx_watchdog)
            self.rx_watchdog = None
        self._receiver_event(ReceiverEvent.DATA_LOST)

    def _overheard(self, f: Frame, intact: bool) -> None:
        pass

    def _handle_frame(self, f: Frame) -> None:
        kind = f.kind
        st = self.sender.tag
        if kind is FrameKind.PREAMBLE_STROBE:
            if f.src == self.upstream and self._can_answer(f):
                self._answer_strobe(f)
        elif kind is FrameKind.EARLY_ACK:
            if st is SenderTag.AWAIT_EA and f.src == self.next_hop:
                self._cancel_tx_timer()
                self._on_early_ack(f)
        elif kind is FrameKind.DATA:
            if self.receiver.tag is ReceiverTag.RECEIVING and f.src == self.rx_from:
                self._accept(f)
                self._on_data_frame(f)
        elif kind in (FrameKind.ACK, FrameKind.BLOCK_ACK):
            if st is SenderTag.AWAIT_ACK and f.src == self.next_hop:
                self._cancel_tx_timer()
                self._acked_ids = set(f.acked)
                self._sender_event(SenderEvent.ACK_RECEIVED)
        elif kind is FrameKind.INTERRUPT:
            self._on_interrupt(f)

    def _on_early_ack(self, f: Frame) -> None:
        self._sender_event(SenderEvent.EA_RECEIVED)

    def _on_data_frame(self, f: Frame) -> None:
        self._receiver_event(ReceiverEvent.DATA_END, last=not f.more)

    def _on_interrupt(self, f: Frame) -> None:
        pass

    def _cancel_tx_timer(self) -> None:
        if self.tx_timer is not None:
            self.engine.cancel(self.tx_timer)
            self.tx_timer = None

    def on_tx_end(self, tx: Transmission) -> None:
        kind = tx.frame.kind
        if kind is FrameKind.PREAMBLE_STROBE:
            self._sender_event(SenderEvent.STROBE_DONE)
        elif kind is FrameKind.DATA:
            self._on_data_sent(tx.frame)
        elif kind is FrameKind.EARLY_ACK:
            self._receiver_event(ReceiverEvent.EA_SENT)
        elif kind in (FrameKind.ACK, FrameKind.BLOCK_ACK):
            self.rx_from = None
            self._receiver_event(ReceiverEvent.ACK_SENT)
            if self.is_sink:
                return
            self._kick()
        else:
            self._on_other_tx_end(tx)

    def _on_other_tx_end(self, tx: Transmission) -> None:
        raise FsmError(f"node {self.id}: unexpected end of own {tx.frame.kind.value}")
