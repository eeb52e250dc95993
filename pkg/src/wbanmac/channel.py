"""Shared single-channel radio medium.

Any temporal overlap between two transmissions corrupts both. A frame is
heard intact by an in-range node only if that node's radio was in a
listening state (Listen or Receive) for the whole frame. Carrier sense is
global: every transmission on the channel counts, regardless of range.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from .common import BROADCAST, Priority, RadioState
from .engine import Engine, ms
from .metrics import EnergyLedger


class FrameKind(str, Enum):
    PREAMBLE_STROBE = "PreambleStrobe"
    EARLY_ACK = "EarlyAck"
    DATA = "Data"
    ACK = "Ack"
    BLOCK_ACK = "BlockAck"
    BEACON = "Beacon"
    INTERRUPT = "Interrupt"


@dataclass(frozen=True)
class FrameTimings:
    t_pre: int = ms(10)
    t_pre_pause: int = ms(10)
    t_ea: int = ms(10)
    t_data: int = ms(25)
    t_ack: int = ms(10.05)
    t_detect: int = ms(7)
    bit_rate: float = 18_780.0  # bits per second

    def __post_init__(self):
        for name in ("t_pre", "t_pre_pause", "t_ea", "t_data", "t_ack", "t_detect", "bit_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def airtime(nbytes: int, rate: float) -> int:
    """Duration in microseconds of ``nbytes`` at ``rate`` bits/s, rounded up."""
    if rate <= 0:
        raise ValueError(f"bit rate must be positive, got {rate}")
    if nbytes < 0:
        raise ValueError(f"payload size must be non-negative, got {nbytes}")
    # integer arithmetic where possible keeps the ceiling exact
    num = nbytes * 8 * 1_000_000
    if float(rate).is_integer():
        return -(-num // int(rate))
    return math.ceil(num / rate)


@dataclass(eq=False)
class Frame:
    kind: FrameKind
    src: int
    dst: int
    airtime: int
    priority: Priority = Priority.NONE
    packets: tuple = ()
    burst: int = 0            # strobes: number of data frames that will follow
    more: bool = False        # data: another frame of the same burst follows
    acked: tuple = ()         # ack-bearing control frames: packet ids covered
    hold_until: int = 0       # interrupt: normal traffic deferred until this time
    klass: Priority = Priority.NONE  # traffic class served; energy accounting only, not on air

    def __post_init__(self):
        if self.airtime <= 0:
            raise ValueError(f"{self.kind.value} frame needs positive airtime")
        if self.kind is FrameKind.DATA and not self.packets:
            raise ValueError("data frame must carry at least one packet")

    @property
    def payload(self) -> tuple:
        return tuple(p.id for p in self.packets)


@dataclass(eq=False)
class Transmission:
    frame: Frame
    start: int
    end: int
    corrupted: bool = False
    heard_by: list = field(default_factory=list)


class Radio:
    __slots__ = ("node", "state", "since", "listen_since", "tag")

    def __init__(self, node: int, state: RadioState, now: int):
        self.node = node
        self.state = state
        self.since = now
        self.listen_since = now if state.listening else None
        self.tag = None


class ChannelError(RuntimeError):
    pass


class Channel:
    def __init__(self, engine: Engine, timings: FrameTimings, neighbors: dict,
                 ledger: EnergyLedger, trace: bool = False):
        self.engine = engine
        self.timings = timings
        self.neighbors = {n: tuple(v) for n, v in neighbors.items()}
        self.ledger = ledger
        self.radios = {n: Radio(n, RadioState.SLEEP, engine.now) for n in neighbors}
        self.handlers: dict = {}
        self.active: list[Transmission] = []
        self._tx_by_node: dict = {}
        self._recent: deque = deque()
        self.frame_trace: Optional[list] = [] if trace else None
        self.collisions = 0
        # how far back busy_between() can look
        self.memory = 2 * timings.t_detect

    def attach(self, node: int, handler) -> None:
        self.handlers[node] = handler

    # ---------------------------------------------------------------- radio

    def set_radio_state(self, node: int, state: RadioState, tag=None) -> None:
        r = self.radios[node]
        now = self.engine.now
        if now < r.since:
            raise ChannelError(f"node {node}: state change at {now} before {r.since}")
        if r.state is RadioState.TRANSMIT and node in self._tx_by_node:
            raise ChannelError(f"node {node} cannot leave Transmit mid-frame")
        if state is r.state and tag is r.tag:
            return
        if now > r.since:
            self.ledger.add(node, r.state, r.since, now, r.tag)
        if state.listening:
            if not r.state.listening or r.listen_since is None:
                r.listen_since = now
        else:
            r.listen_since = None
        r.state = state
        r.since = now
        r.tag = tag

    def retag(self, node: int, tag) -> None:
        """Change energy attribution without changing radio state."""
        r = self.radios[node]
        if r.tag is tag:
            return
        now = self.engine.now
        if now > r.since:
            self.ledger.add(node, r.state, r.since, now, r.tag)
            r.since = now
        r.tag = tag

    def state_of(self, node: int) -> RadioState:
        return self.radios[node].state

    def close(self) -> None:
        now = self.engine.now
        for r in self.radios.values():
            if now > r.since:
                self.ledger.add(r.node, r.state, r.since, now, r.tag)
                r.since = now

    # ---------------------------------------------------------- transmission

    def begin_transmission(self, src: int, frame: Frame, tag=None) -> Transmission:
        if src in self._tx_by_node:
            raise ChannelError(f"node {src} is already transmitting")
        now = self.engine.now
        tx = Transmission(frame, now, now + frame.airtime)
        for other in self.active:
            if other.end > now:  # frames are half-open: touching is not overlapping
                other.corrupted = True
                tx.corrupted = True
        if tx.corrupted:
            self.collisions += 1
        self.set_radio_state(src, RadioState.TRANSMIT, tag)
        self.active.append(tx)
        self._tx_by_node[src] = tx
        self._recent.append(tx)
        radios = self.radios
        handlers = self.handlers
        for n in self.neighbors[src]:
            if radios[n].state.listening:
                h = handlers.get(n)
                if h is not None:
                    h.on_frame_start(tx)
        self.engine.schedule(tx.end, self._end_transmission, tx, kind="frame_end", target=src)
        return tx

    def _end_transmission(self, tx: Transmission) -> None:
        self.active.remove(tx)
        frame = tx.frame
        src = frame.src
        del self._tx_by_node[src]
        radios = self.radios
        intact = not tx.corrupted
        for n in self.neighbors[src]:
            r = radios[n]
            if r.state.listening and r.listen_since is not None and r.listen_since <= tx.start:
                if intact:
                    tx.heard_by.append(n)
                h = self.handlers.get(n)
                if h is not None:
                    h.on_frame_end(tx, intact)
        if self.frame_trace is not None:
            if tx.corrupted:
                outcome = "corrupted"
            elif (frame.dst in tx.heard_by) or (frame.dst == BROADCAST and tx.heard_by):
                outcome = "delivered"
            else:
                outcome = "unheard"
            self.frame_trace.append((tx.start, tx.end, frame.kind.value, src, frame.dst,
                                     frame.priority.value, outcome))
        h = self.handlers.get(src)
        if h is not None:
            h.on_tx_end(tx)
        if radios[src].state is RadioState.TRANSMIT and src not in self._tx_by_node:
            # the MAC did not pick a follow-up state; fall back to listening
            self.set_radio_state(src, RadioState.LISTEN, radios[src].tag)
        self._prune()

    def transmitting(self, node: int) -> bool:
        return node in self._tx_by_node

    def in_progress_from(self, nodes: Iterable[int]) -> Optional[Transmission]:
        for tx in self.active:
            if tx.frame.src in nodes:
                return tx
        return None

    def starting_now_from(self, node: int) -> Optional[Transmission]:
        """A transmission by ``node`` that began at the current instant."""
        tx = self._tx_by_node.get(node)
        if tx is not None and tx.start == self.engine.now:
            return tx
        return None

    # --------------------------------------------------------- carrier sense

    def busy_between(self, start: int, end: int) -> bool:
        for tx in self._recent:
            if tx.start < end and tx.end > start:
                return True
        return False

    def carrier_sense(self, node: int, callback: Callable[[bool], None], tag=None):
        """Sense for ``t_detect``; ``callback(busy)`` fires when the window closes."""
        r = self.radios[node]
        if not r.state.listening:
            self.set_radio_state(node, RadioState.LISTEN, tag)
        start = self.engine.now
        return self.engine.after(self.timings.t_detect, self._sense_done, node, start, callback,
                                 kind="sense", target=node)

    def _sense_done(self, node, start, callback):
        callback(self.busy_between(start, self.engine.now))

    def _prune(self) -> None:
        horizon = self.engine.now - self.memory
        recent = self._recent
        while recent and recent[0].end < horizon and recent[0] not in self.active:
            recent.popleft()

    def trace_lines(self) -> list[str]:
        if self.frame_trace is None:
            return []
        return [f"{s}\t{kind}\t{src}\t{dst}\t{prio}\t{outcome}\t{e - s}"
                for s, e, kind, src, dst, prio, outcome in self.frame_trace]
