"""ADP2-MAC: ADP-MAC with two traffic classes.

On top of the baseline this adds strict-priority queues, a smaller (and
optionally adaptive) contention window for urgent traffic, a strobe
priority flag, per-class polling schedules, and interruption of normal
transfers at frame boundaries, either because the receiver predicts an
urgent arrival or because the sender has an urgent packet ready and
strobes for it in the checkpoint gap between two normal data frames.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from ..channel import Frame, FrameKind, Transmission
from ..common import Priority, RadioState
from ..engine import RngStream, ms
from ..traffic import ArrivalHistory, Packet, UrgentPrediction, predict_next_urgent
from .adp import (AdpNode, PollDistribution, PollingPolicy, PollMode, ReceiverEvent,
                  ReceiverState, ReceiverTag, SenderEvent, SenderState, SenderTag, concatenate,
                  _without, draw_sleep, update_policy)


# --------------------------------------------------------------------------
# contention window


@dataclass(frozen=True)
class CwPolicy:
    cw_normal: int = 32
    cw_urgent: int = 8
    adaptive: bool = False

    def __post_init__(self):
        if not 1 <= self.cw_urgent <= self.cw_normal <= 32:
            raise ValueError("need 1 <= cw_urgent <= cw_normal <= 32")


def select_cw(priority: Priority, p: CwPolicy, deferrals: int = 0) -> int:
    """Window in slots; adaptive urgent windows halve per consecutive deferral."""
    if priority is not Priority.URGENT:
        return p.cw_normal
    if not p.adaptive:
        return p.cw_urgent
    return max(1, p.cw_urgent >> max(0, deferrals))


# --------------------------------------------------------------------------
# interruption


class InterruptReason(str, Enum):
    PREDICTED = "PredictedUrgentOverlap"
    URGENT_STROBE = "UrgentStrobeHeard"
    NONE = "None"


@dataclass(frozen=True)
class InterruptDecision:
    interrupt: bool = False
    reason: InterruptReason = InterruptReason.NONE

    def __post_init__(self):
        if self.interrupt and self.reason is InterruptReason.NONE:
            raise ValueError("an interruption needs a reason")


NO_INTERRUPT = InterruptDecision()


def should_interrupt(now: int, normal_busy_until: int, pred: UrgentPrediction,
                     urgent_strobe_heard: bool = False) -> InterruptDecision:
    if urgent_strobe_heard:
        return InterruptDecision(True, InterruptReason.URGENT_STROBE)
    if pred.valid:
        lo, hi = pred.window
        if lo <= normal_busy_until and hi >= now:
            return InterruptDecision(True, InterruptReason.PREDICTED)
    return NO_INTERRUPT


@dataclass(frozen=True)
class NormalExchange:
    """What the receiver knows about the normal transfer it may cut short."""
    sender: int
    received: tuple = ()
    at_strobe: bool = True


def preempt(decision: InterruptDecision, exchange: NormalExchange, hold_until: int) -> list:
    """Actions a receiver takes at a frame boundary to interrupt a normal transfer.

    A live urgent strobe is answered straight away with an EA that also
    covers the normal frames already received. A predicted arrival is
    answered with an Interrupt frame instead of the EA or the next ACK,
    telling the sender to hold its normal traffic until ``hold_until``.
    """
    if not decision.interrupt:
        return []
    withheld = "ea" if exchange.at_strobe else "ack"
    if decision.reason is InterruptReason.URGENT_STROBE:
        return [("withhold", withheld), ("send_ea", exchange.received)]
    return [("withhold", withheld), ("send_interrupt", exchange.received, hold_until),
            ("hold", hold_until)]


# --------------------------------------------------------------------------
# polling


def schedule_poll(urgent_policy: PollingPolicy, normal_policy: PollingPolicy,
                  rng: Optional[RngStream]) -> int:
    """Sleep until the earlier of one draw from each class's polling policy."""
    return draw_sleep((urgent_policy, normal_policy), rng)


# --------------------------------------------------------------------------
# node


class Adp2Node(AdpNode):
    distinguishes_priority = True

    def __init__(self, sim, node_id: int):
        super().__init__(sim, node_id)
        cfg = self.cfg
        self.urgent: deque = deque()
        self.normal: deque = deque()
        self.cw_policy = CwPolicy(cfg.cw_max, cfg.cw_urgent, cfg.cw_adaptive)
        self.deferrals = 0
        mode = PollMode(cfg.polling_mode)
        self.hist = {Priority.URGENT: ArrivalHistory(cfg.cv_window),
                     Priority.NORMAL: ArrivalHistory(cfg.cv_window)}
        self.policies = {p: PollingPolicy(PollDistribution.DETERMINISTIC, ms(cfg.t_pi_ms), mode)
                         for p in (Priority.URGENT, Priority.NORMAL)}
        # one sample per urgent exchange received, for predicting the next one
        self.urgent_exchanges = ArrivalHistory(cfg.cv_window)
        self.rx_urgent_noted = False
        self.rx_burst = 0
        self.rx_frames = 0
        self.rx_hold_until = 0
        self.interrupted_for: Optional[int] = None
        self.ea_acks: tuple = ()
        self.normal_hold_until = 0
        self.hold_ev = None
        self.cp_waiting = False

    # ------------------------------------------------------------- queueing

    def _store(self, pkt: Packet) -> None:
        (self.urgent if pkt.priority is Priority.URGENT else self.normal).append(pkt)

    def enqueue(self, pkt: Packet) -> None:
        self._store(pkt)
        if (pkt.priority is Priority.URGENT and self.burst
                and self._burst_klass() is Priority.NORMAL
                and self.sender.tag in (SenderTag.CARRIER_SENSE, SenderTag.BACKOFF)):
            # restart contention for the urgent packet
            self.log("preempt_access", str(pkt.id))
            self._abort_access()
        self._kick()

    def _has_queued(self) -> bool:
        if self.urgent:
            return True
        return bool(self.normal) and self.engine.now >= self.normal_hold_until

    def _select_burst(self) -> None:
        queue = self.urgent if self.urgent else self.normal
        self.burst, self.burst_ack = concatenate(queue, self.cfg.max_burst)

    def _remove_from_queue(self, pkts) -> None:
        urgent = [p for p in pkts if p.priority is Priority.URGENT]
        normal = [p for p in pkts if p.priority is not Priority.URGENT]
        if urgent:
            self.urgent = _without(self.urgent, urgent)
        if normal:
            self.normal = _without(self.normal, normal)

    def _forget_acked_normal(self, acked) -> None:
        if acked:
            ids = set(acked)
            self.normal = _without(self.normal, [p for p in self.normal if p.id in ids])

    def _strobe_priority(self) -> Priority:
        return self._burst_klass()

    def _cw(self) -> int:
        return select_cw(self._burst_klass(), self.cw_policy, self.deferrals)

    # ------------------------------------------------------------- contention

    def _on_sense(self, busy: bool) -> None:
        if busy and self._burst_klass() is Priority.URGENT:
            self.deferrals += 1
        super()._on_sense(busy)

    def _do_dequeue(self) -> None:
        if self._burst_klass() is Priority.URGENT:
            self.deferrals = 0
        super()._do_dequeue()

    def _overheard(self, f: Frame, intact: bool) -> None:
        if (self.cp_waiting and f.src == self.next_hop and not intact
                and self.sender.tag is SenderTag.SENDING_DATA):
            # the receiver answered in the checkpoint gap but we lost the frame
            self.cp_waiting = False
            self._interrupted(0)
            return
        if (intact and f.kind is FrameKind.PREAMBLE_STROBE and f.priority is Priority.URGENT
                and self.sender.tag is SenderTag.BACKOFF and self._burst_klass() is Priority.NORMAL
                and self.tx_timer is not None and self.tx_timer.pending):
            # freeze the countdown while the urgent exchange runs
            remaining = self.tx_timer.fire_at - self.engine.now
            t = self.t
            freeze = t.t_pre_pause + t.t_ea + t.t_data + t.t_ack
            self.engine.cancel(self.tx_timer)
            self.backoff_since = self.engine.now + freeze
            self.tx_timer = self.engine.after(freeze + remaining, self._on_backoff_done,
                                              kind="backoff", target=self.id)
            self.log("freeze", str(f.src))

    # ---------------------------------------------------------- sender side

    def _on_data_sent(self, frame: Frame) -> None:
        self.burst_index += 1
        if not frame.more:
            self._sender_event(SenderEvent.DATA_DONE)
            return
        if self._burst_klass() is not Priority.NORMAL:
            self._send_next_data()
            return
        # checkpoint gap: listen for an interrupt, or sense before an urgent strobe
        if self.urgent and self.cfg.interrupt_urgent_strobe:
            self.tx_timer = self.channel.carrier_sense(self.id, self._on_checkpoint,
                                                       tag=Priority.NORMAL)
        else:
            self.channel.set_radio_state(self.id, RadioState.LISTEN, Priority.NORMAL)
            self.tx_timer = self.engine.after(self.t.t_detect, self._on_checkpoint, None,
                                              kind="checkpoint", target=self.id)

    def _on_checkpoint(self, busy: Optional[bool]) -> None:
        self.tx_timer = None
        if self.channel.in_progress_from((self.next_hop,)) is not None:
            # the receiver is talking; its frame decides what happens next
            self.cp_waiting = True
            return
        if busy is False and self.urgent:
            self.log("interrupt", "urgent strobe")
            self.burst = []
            self.burst_index = 0
            self._select_burst()
            self.sender = SenderState(tag=SenderTag.STROBING, strobes=1, train_start=self.engine.now)
            self._do_strobe()
            return
        self._send_next_data()

    def _on_early_ack(self, f: Frame) -> None:
        self._forget_acked_normal(f.acked)
        super()._on_early_ack(f)

    def _on_interrupt(self, f: Frame) -> None:
        if f.src != self.next_hop or f.dst != self.id:
            return
        if self.sender.tag not in (SenderTag.AWAIT_EA, SenderTag.SENDING_DATA):
            return
        self._cancel_tx_timer()
        self.cp_waiting = False
        self._forget_acked_normal(f.acked)
        self._interrupted(f.hold_until)

    def _interrupted(self, hold_until: int) -> None:
        self.log("interrupted", str(hold_until))
        if hold_until > max(self.normal_hold_until, self.engine.now):
            self.normal_hold_until = hold_until
            if self.hold_ev is not None:
                self.engine.cancel(self.hold_ev)
            self.hold_ev = self.engine.schedule(hold_until, self._on_hold_over, kind="hold",
                                                target=self.id)
        self._sender_event(SenderEvent.INTERRUPTED)

    def _on_hold_over(self) -> None:
        self.hold_ev = None
        self._kick()

    # -------------------------------------------------------- receiver side

    def _poll_policy(self):
        return (self.policies[Priority.URGENT], self.policies[Priority.NORMAL])

    def _observe_arrival(self, pkt: Packet, now: int) -> None:
        prio = pkt.priority
        h = self.hist[prio]
        h.observe(now)
        if self.cfg.polling_adaptive:
            self.policies[prio] = update_policy(h, self.policies[prio], self.cfg.cv_threshold,
                                                ms(self.cfg.polling_mean_cap_ms))
        if prio is Priority.URGENT and not self.rx_urgent_noted:
            self.rx_urgent_noted = True
            self.urgent_exchanges.observe(now)

    def prediction(self) -> UrgentPrediction:
        cfg = self.cfg
        return predict_next_urgent(self.urgent_exchanges, self.urgent_exchanges.last, cfg.guard_k,
                                   ms(cfg.guard_min_ms), ms(cfg.guard_max_ms))

    def _predicted_decision(self, busy_until: int) -> tuple[InterruptDecision, UrgentPrediction]:
        if not self.cfg.interrupt_predicted:
            return NO_INTERRUPT, UrgentPrediction()
        pred = self.prediction()
        if pred.valid and pred.expected_at == self.interrupted_for:
            # each prediction costs the normal traffic at most one deferral
            return NO_INTERRUPT, pred
        return should_interrupt(self.engine.now, busy_until, pred), pred

    def _normal_busy_until(self, frames_left: int, at_strobe: bool) -> int:
        t = self.t
        span = frames_left * t.t_data + max(0, frames_left - 1) * t.t_detect + t.t_ack
        if at_strobe:
            span += t.t_ea
        else:
            span += frames_left * t.t_detect
        return self.engine.now + span

    def _can_answer(self, strobe: Frame) -> bool:
        if (self.receiver.tag is ReceiverTag.RECEIVING and strobe.src == self.rx_from
                and strobe.priority is Priority.URGENT and self.rx_klass is Priority.NORMAL
                and self.cfg.interrupt_urgent_strobe):
            return True
        return super()._can_answer(strobe)

    def _answer_strobe(self, strobe: Frame) -> None:
        now = self.engine.now
        if self.receiver.tag is ReceiverTag.RECEIVING:
            decision = should_interrupt(now, now, UrgentPrediction(), urgent_strobe_heard=True)
            exchange = NormalExchange(strobe.src, tuple(self.rx_received), at_strobe=False)
            self._run_preempt(preempt(decision, exchange, 0), strobe)
            return
        if strobe.priority is Priority.NORMAL:
            if now < self.rx_hold_until:
                self.log("refuse", str(strobe.src))
                return
            decision, pred = self._predicted_decision(self._normal_busy_until(strobe.burst, True))
            if decision.interrupt:
                self.interrupted_for = pred.expected_at
                hold = pred.expected_at + pred.guard_after
                self._run_preempt(preempt(decision, NormalExchange(strobe.src), hold), strobe)
                return
        self._begin_exchange(strobe)

    def _begin_exchange(self, strobe: Frame) -> None:
        self.rx_urgent_noted = False
        self.rx_burst = max(1, strobe.burst)
        self.rx_frames = 0
        super()._answer_strobe(strobe)

    def _run_preempt(self, actions: list, strobe: Optional[Frame]) -> None:
        for act in actions:
            name = act[0]
            if name == "withhold":
                self.log("withhold", act[1])
            elif name == "send_ea":
                self.ea_acks = act[1]
                self._begin_exchange(strobe)
            elif name == "send_interrupt":
                self._send_interrupt(strobe.src if strobe is not None else self.rx_from,
                                     act[1], act[2])
            elif name == "hold":
                self.rx_hold_until = max(self.rx_hold_until, act[1])

    def _send_interrupt(self, dst: int, acked: tuple, hold_until: int) -> None:
        if self.sending:
            self._abort_access()
            self.poll_pending = False
        self._cancel_rx_timer()
        if self.rx_watchdog is not None:
            self.engine.cancel(self.rx_watchdog)
            self.rx_watchdog = None
        self.rx_from = dst
        self.rx_received = []
        self.receiver = ReceiverState(ReceiverTag.SENDING_ACK)
        f = Frame(FrameKind.INTERRUPT, self.id, dst, self.t.t_ea, acked=tuple(acked),
                  hold_until=hold_until, klass=Priority.NORMAL)
        self.channel.begin_transmission(self.id, f, tag=Priority.NORMAL)

    def _rx_send_ea(self) -> None:
        acked, self.ea_acks = self.ea_acks, ()
        f = Frame(FrameKind.EARLY_ACK, self.id, self.rx_from, self.t.t_ea, acked=acked)
        self.channel.begin_transmission(self.id, f, tag=self.rx_klass)

    def _on_data_frame(self, f: Frame) -> None:
        self.rx_frames += 1
        if f.more and self.rx_klass is Priority.NORMAL:
            left = max(1, self.rx_burst - self.rx_frames)
            decision, pred = self._predicted_decision(self._normal_busy_until(left, False))
            if decision.interrupt:
                self.interrupted_for = pred.expected_at
                hold = pred.expected_at + pred.guard_after
                exchange = NormalExchange(f.src, tuple(self.rx_received), at_strobe=False)
                self._run_preempt(preempt(decision, exchange, hold), None)
                return
        super()._on_data_frame(f)

    def _data_gap_limit(self) -> int:
        if self.rx_klass is Priority.NORMAL:
            # normal bursts leave a checkpoint gap between frames
            return 2 * self.t.t_detect
        return self.t.t_detect

    def on_tx_end(self, tx: Transmission) -> None:
        if tx.frame.kind is FrameKind.INTERRUPT:
            self.rx_from = None
            self._receiver_event(ReceiverEvent.ACK_SENT)
            self._kick()
            return
        super().on_tx_end(tx)
