"""MVDR baseline: beacon-delimited superframes with per-priority service.

Every ``period`` the sink sends a beacon. Normal traffic contends in the
contention access period (CAP) with slotted CSMA/CA; urgent traffic is sent
contention-free, at a higher bit rate, in guaranteed time slots (GTS) that
are handed out round-robin over the registered urgent flows. Radios sleep
for the whole inactive part of the superframe. Synchronisation is ideal:
every node follows the coordinator's schedule and never misses a beacon.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

from ..channel import Frame, FrameKind, Transmission, airtime
from ..common import BROADCAST, Priority, RadioState
from ..config import ConfigError
from ..engine import RngStream, ms


DEFERRED = "Deferred"


@dataclass(frozen=True)
class RatePolicy:
    rate_normal: float = 18_780.0
    rate_urgent: float = 37_560.0

    def __post_init__(self):
        if not 0 < self.rate_normal <= self.rate_urgent:
            raise ValueError("need 0 < rate_normal <= rate_urgent")

    def rate_for(self, priority: Priority) -> float:
        return self.rate_urgent if priority is Priority.URGENT else self.rate_normal


@dataclass(frozen=True)
class GtsSlot:
    start: int
    end: int
    node: Optional[int]
    flow: Optional[tuple] = None


@dataclass(frozen=True)
class Superframe:
    index: int
    beacon_at: int
    beacon_dur: int
    cap: tuple
    gts_slots: tuple
    period: int
    active_dur: int

    def __post_init__(self):
        if self.period <= self.active_dur:
            raise ValueError("superframe period must exceed its active portion")
        edges = [(self.beacon_at, self.beacon_at + self.beacon_dur), self.cap]
        edges += [(s.start, s.end) for s in self.gts_slots]
        for (a0, a1), (b0, b1) in zip(edges, edges[1:]):
            if not a0 <= a1 <= b0 <= b1:
                raise ValueError("superframe intervals must be ordered and disjoint")
        if edges[-1][1] > self.beacon_at + self.active_dur:
            raise ValueError("superframe layout exceeds the active portion")

    @property
    def active_end(self) -> int:
        return self.beacon_at + self.active_dur

    @property
    def gts_region(self) -> tuple:
        if not self.gts_slots:
            return self.cap[1], self.cap[1]
        return self.gts_slots[0].start, self.gts_slots[-1].end

    def slots_of(self, node: int) -> list:
        return [s for s in self.gts_slots if s.node == node]


def register_flows(topology, urgent_origins: Optional[Sequence[int]] = None) -> list:
    """Urgent flows as (carrier, origin) pairs: each node registers every
    urgent origin whose packets pass through it."""
    origins = sorted(topology.sensors if urgent_origins is None else urgent_origins)
    flows = []
    for node in sorted(topology.sensors):
        for origin in origins:
            if node in _path(topology, origin):
                flows.append((node, origin))
    return flows


def _path(topology, origin: int) -> list:
    path = [origin]
    n = origin
    while n != topology.sink:
        n = topology.next_hop(n)
        if n != topology.sink:
            path.append(n)
    return path


def _layout(cfg):
    beacon = ms(cfg.mvdr_beacon_ms)
    cap = ms(cfg.mvdr_cap_ms)
    slot = ms(cfg.mvdr_gts_slot_ms)
    period = ms(cfg.t_cycle_ms)
    active = ms(cfg.t_wake_ms)
    if beacon + cap + cfg.mvdr_gts_slots * slot > active:
        raise ConfigError("MVDR beacon + CAP + GTS region exceeds the active portion")
    if period <= active:
        raise ConfigError("MVDR period must exceed the active portion")
    return beacon, cap, slot, period, active


def superframe_schedule(cfg, flows: Sequence[tuple] = (), start_index: int = 0) -> Iterator[Superframe]:
    """Endless sequence of superframes; GTS slots go round-robin over ``flows``."""
    beacon, cap, slot, period, active = _layout(cfg)
    n_slots = cfg.mvdr_gts_slots
    rr = (start_index * n_slots) % len(flows) if flows else 0
    k = start_index
    while True:
        t0 = k * period
        cap_iv = (t0 + beacon, t0 + beacon + cap)
        slots = []
        s0 = cap_iv[1]
        for j in range(n_slots):
            flow = None
            if flows:
                flow = flows[rr]
                rr = (rr + 1) % len(flows)
            slots.append(GtsSlot(s0 + j * slot, s0 + (j + 1) * slot,
                                 flow[0] if flow else None, flow))
        yield Superframe(k, t0, beacon, cap_iv, tuple(slots), period, active)
        k += 1


def cap_access(node: int, frame_airtime: int, sf: Superframe, rng: Optional[RngStream], *,
               now: int, cw: int = 32, slot: int = ms(1), t_detect: int = ms(7),
               t_ack: int = ms(10.05)) -> Union[int, str]:
    """Plan one CSMA/CA attempt inside ``sf``'s CAP.

    Returns the instant the frame would go on air after a uniform backoff and
    a ``t_detect`` carrier sense, or ``DEFERRED`` if the data frame plus its
    ack no longer fits before the CAP closes.
    """
    cap_start, cap_end = sf.cap
    if now >= cap_end:
        return DEFERRED
    start = max(now, cap_start)
    slots = rng.randint_below(cw) if rng is not None else 0
    tx_at = start + slots * slot + t_detect
    if tx_at + frame_airtime + t_ack > cap_end:
        return DEFERRED
    return tx_at


def gts_access(node: int, frame_airtime: int, sf: Superframe, *, now: int) -> Union[int, str]:
    """Start of ``node``'s next GTS slot in ``sf`` that has not begun yet."""
    for s in sf.gts_slots:
        if s.node == node and frame_airtime > s.end - s.start:
            raise ConfigError("urgent data frame does not fit in a GTS slot")
    for s in sf.gts_slots:
        if s.node == node and s.start >= now:
            return s.start
    return DEFERRED


# --------------------------------------------------------------------------
# simulation


class Coordinator:
    """The sink's superframe clock; drives every node through each phase."""

    def __init__(self, sim):
        self.sim = sim
        cfg = sim.config
        self.flows = register_flows(sim.topology)
        self.schedule = superframe_schedule(cfg, self.flows)
        self.current: Optional[Superframe] = None
        self.urgent_airtime = airtime(cfg.packet_bytes, cfg.mvdr_rate_urgent_kbps * 1000.0)
        slot = ms(cfg.mvdr_gts_slot_ms)
        if cfg.mvdr_gts_slots and self.urgent_airtime > slot:
            raise ConfigError("urgent data frame does not fit in a GTS slot")
        self.engine = sim.engine
        self.engine.schedule(0, self._superframe, kind="beacon", target=sim.topology.sink)

    def _superframe(self) -> None:
        sf = next(self.schedule)
        self.current = sf
        nodes = self.sim.nodes
        for n in nodes.values():
            n.on_beacon(sf)
        self.engine.schedule(sf.cap[0], self._phase, "cap", sf, kind="cap", target=0)
        self.engine.schedule(sf.cap[1], self._phase, "gts", sf, kind="gts", target=0)
        for s in sf.gts_slots:
            self.engine.schedule(s.start, self._slot, s, kind="gts_slot", target=s.node)
        self.engine.schedule(sf.active_end, self._phase, "inactive", sf, kind="inactive", target=0)
        self.engine.schedule(sf.beacon_at + sf.period, self._superframe, kind="beacon", target=0)

    def _phase(self, name: str, sf: Superframe) -> None:
        for n in self.sim.nodes.values():
            getattr(n, "on_" + name)(sf)

    def _slot(self, slot: GtsSlot) -> None:
        if slot.node is None:
            return
        owner = self.sim.nodes[slot.node]
        receiver = self.sim.nodes[owner.next_hop]
        receiver.on_gts_receive(slot)
        owner.on_gts_slot(slot)


class MvdrNode:
    distinguishes_priority = True

    @staticmethod
    def setup_network(sim) -> None:
        sim.coordinator = Coordinator(sim)

    def __init__(self, sim, node_id: int):
        cfg = sim.config
        self.sim = sim
        self.cfg = cfg
        self.id = node_id
        self.engine = sim.engine
        self.channel = sim.channel
        self.t = sim.timings
        topo = sim.topology
        self.is_sink = node_id == topo.sink
        self.next_hop = None if self.is_sink else topo.next_hop(node_id)
        self.upstream = topo.upstream(node_id)
        self.rates = RatePolicy(self.t.bit_rate, cfg.mvdr_rate_urgent_kbps * 1000.0)
        self.urgent_airtime = airtime(cfg.packet_bytes, self.rates.rate_urgent)
        self.rng = sim.rng(node_id, "backoff")
        self.slot = ms(cfg.slot_ms)
        self.urgent: deque = deque()
        self.normal: deque = deque()
        self.queue = self.normal
        self.phase = "inactive"
        self.sf: Optional[Superframe] = None
        self.timer = None
        self.state = "idle"          # idle, backoff, sense, tx, await_ack, rx_ack
        self.inflight: Optional[object] = None
        self.retries = {Priority.URGENT: 0, Priority.NORMAL: 0}
        self.seen: set = set()
        self.gts_rx: Optional[GtsSlot] = None
        self.gts_watch = None
        self.channel.attach(node_id, self)

    def start(self) -> None:
        self.channel.set_radio_state(self.id, RadioState.LISTEN if self.is_sink else RadioState.SLEEP)

    def log(self, what: str, detail: str = "") -> None:
        self.sim.mac_event(self.id, what, detail)

    # ------------------------------------------------------------- queueing

    def enqueue(self, pkt) -> None:
        (self.urgent if pkt.priority is Priority.URGENT else self.normal).append(pkt)
        if pkt.priority is Priority.NORMAL and self.phase == "cap" and self.state == "idle":
            self._cap_attempt()

    def _radio(self, state: RadioState, tag=None) -> None:
        if self.is_sink:
            if state is not RadioState.TRANSMIT:
                state = RadioState.LISTEN
        if not self.channel.transmitting(self.id):
            self.channel.set_radio_state(self.id, state, tag)

    def _cancel_timer(self) -> None:
        if self.timer is not None:
            self.engine.cancel(self.timer)
            self.timer = None

    # --------------------------------------------------------------- phases

    def on_beacon(self, sf: Superframe) -> None:
        self.sf = sf
        self.phase = "beacon"
        if self.is_sink:
            f = Frame(FrameKind.BEACON, self.id, BROADCAST, sf.beacon_dur)
            self.channel.begin_transmission(self.id, f)
        else:
            self._radio(RadioState.LISTEN)

    def on_cap(self, sf: Superframe) -> None:
        self.phase = "cap"
        self._radio(RadioState.LISTEN, Priority.NORMAL)
        self.state = "idle"
        if self.normal and not self.is_sink:
            self._cap_attempt()

    def on_gts(self, sf: Superframe) -> None:
        self.phase = "gts"
        self._cancel_timer()
        self.state = "idle"
        self.inflight = None
        self._radio(RadioState.IDLE)

    def on_inactive(self, sf: Superframe) -> None:
        self.phase = "inactive"
        self._cancel_timer()
        self.state = "idle"
        self.inflight = None
        self.gts_rx = None
        self._radio(RadioState.SLEEP)

    # ------------------------------------------------------------------ CAP

    def _cap_attempt(self) -> None:
        """Back off, then sense; the frame goes out if it still fits."""
        tx_at = cap_access(self.id, self.t.t_data, self.sf, self.rng, now=self.engine.now,
                           cw=self.cfg.cw_max, slot=self.slot, t_detect=self.t.t_detect,
                           t_ack=self.t.t_ack)
        if tx_at == DEFERRED:
            self.state = "idle"
            self.log("defer", "cap")
            return
        self.state = "backoff"
        self.timer = self.engine.schedule(tx_at - self.t.t_detect, self._cap_sense,
                                          kind="backoff", target=self.id)

    def _cap_sense(self) -> None:
        self.state = "sense"
        self.timer = self.channel.carrier_sense(self.id, self._cap_sensed, tag=Priority.NORMAL)

    def _cap_sensed(self, busy: bool) -> None:
        self.timer = None
        if self.phase != "cap":
            return
        if busy:
            self._cap_attempt()
            return
        if self.engine.now + self.t.t_data + self.t.t_ack > self.sf.cap[1]:
            self.state = "idle"
            self.log("defer", "cap")
            return
        pkt = self.normal[0]
        self.inflight = pkt
        self.state = "tx"
        f = Frame(FrameKind.DATA, self.id, self.next_hop, self.t.t_data, priority=Priority.NORMAL,
                  packets=(pkt,), klass=Priority.NORMAL)
        self.channel.begin_transmission(self.id, f, tag=Priority.NORMAL)

    # ------------------------------------------------------------------ GTS

    def on_gts_slot(self, slot: GtsSlot) -> None:
        if self.phase != "gts" or not self.urgent:
            return
        pkt = self.urgent[0]
        self.inflight = pkt
        self.state = "tx"
        f = Frame(FrameKind.DATA, self.id, self.next_hop, self.urgent_airtime,
                  priority=Priority.URGENT, packets=(pkt,), klass=Priority.URGENT)
        self.channel.begin_transmission(self.id, f, tag=Priority.URGENT)

    def on_gts_receive(self, slot: GtsSlot) -> None:
        if self.phase != "gts":
            return
        self.gts_rx = slot
        self._radio(RadioState.LISTEN, Priority.URGENT)
        if self.gts_watch is not None:
            self.engine.cancel(self.gts_watch)
        self.gts_watch = self.engine.after(self.t.t_detect, self._gts_quiet, slot,
                                           kind="gts_watch", target=self.id)

    def _gts_quiet(self, slot: GtsSlot) -> None:
        self.gts_watch = None
        if self.gts_rx is not slot or self.phase != "gts":
            return
        tx = self.channel.in_progress_from((slot.node,))
        if tx is None:
            # nothing is coming in this slot
            self.gts_rx = None
            self._radio(RadioState.IDLE)

    # ----------------------------------------------------- channel callbacks

    def on_frame_start(self, tx: Transmission) -> None:
        pass

    def on_frame_end(self, tx: Transmission, intact: bool) -> None:
        f = tx.frame
        if not intact or f.dst != self.id:
            return
        if f.kind is FrameKind.DATA:
            self._receive_data(f)
        elif f.kind is FrameKind.ACK and self.state == "await_ack" and f.src == self.next_hop:
            self._acked()

    def _receive_data(self, f: Frame) -> None:
        urgent = f.priority is Priority.URGENT
        if urgent and (self.gts_rx is None or f.src != self.gts_rx.node):
            return
        if not urgent and self.phase != "cap":
            return
        if self.state in ("backoff", "sense"):
            # answer first, then restart our own contention
            self._cancel_timer()
            self.state = "idle"
        now = self.engine.now
        for pkt in f.packets:
            if pkt.id in self.seen:
                continue
            self.seen.add(pkt.id)
            pkt.hops += 1
            pkt.hop_times.append(now)
            if self.is_sink:
                self.sim.deliver(pkt)
            else:
                (self.urgent if pkt.priority is Priority.URGENT else self.normal).append(pkt)
        tag = Priority.URGENT if urgent else Priority.NORMAL
        ack = Frame(FrameKind.ACK, self.id, f.src, self.t.t_ack, acked=f.payload, klass=tag)
        self.state = "rx_ack" if self.state == "idle" else self.state
        self.channel.begin_transmission(self.id, ack, tag=tag)

    def on_tx_end(self, tx: Transmission) -> None:
        f = tx.frame
        if f.kind is FrameKind.BEACON:
            return
        if f.kind is FrameKind.DATA:
            self.state = "await_ack"
            tag = f.klass
            self.channel.set_radio_state(self.id, RadioState.LISTEN, tag)
            self.timer = self.engine.after(self.t.t_ack, self._ack_timeout, kind="ack_timeout",
                                           target=self.id)
            return
        if f.kind is FrameKind.ACK:
            if self.state == "rx_ack":
                self.state = "idle"
            if f.klass is Priority.URGENT:
                self.gts_rx = None
                self._radio(RadioState.IDLE)
            elif self.phase == "cap":
                self._radio(RadioState.LISTEN, Priority.NORMAL)
                if self.state == "idle" and self.normal and not self.is_sink:
                    self._cap_attempt()

    def _acked(self) -> None:
        self._cancel_timer()
        pkt = self.inflight
        self.inflight = None
        self.retries[pkt.priority] = 0
        self._remove(pkt)
        self._after_exchange(pkt.priority)

    def _ack_timeout(self) -> None:
        self.timer = None
        pkt = self.inflight
        self.inflight = None
        self.retries[pkt.priority] += 1
        pkt.retransmissions += 1
        if self.retries[pkt.priority] > self.cfg.retry_limit:
            self.retries[pkt.priority] = 0
            self._remove(pkt)
            self.sim.drop([pkt], self.id)
        self._after_exchange(pkt.priority)

    def _remove(self, pkt) -> None:
        q = self.urgent if pkt.priority is Priority.URGENT else self.normal
        if q and q[0] is pkt:
            q.popleft()
        else:
            try:
                q.remove(pkt)
            except ValueError:
                pass

    def _after_exchange(self, priority: Priority) -> None:
        self.state = "idle"
        if priority is Priority.URGENT:
            self._radio(RadioState.IDLE)
            return
        if self.phase == "cap":
            self._radio(RadioState.LISTEN, Priority.NORMAL)
            if self.normal:
                self._cap_attempt()
