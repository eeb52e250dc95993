"""One simulation run assembled from a :class:`~wbanmac.config.SimConfig`."""
from __future__ import annotations

from typing import Optional, Sequence

from .channel import Channel
from .common import Priority
from .config import SimConfig
from .engine import Engine, RngStreams, RunReport, ms
from .metrics import DeliveryRecord, EnergyLedger, SummaryRow, summarize
from .topology import Topology
from .traffic import Generator, Pattern, TrafficSource


def _node_class(protocol: str):
    if protocol == "ADP":
        from .mac.adp import AdpNode
        return AdpNode
    if protocol == "ADP2":
        from .mac.adp2 import Adp2Node
        return Adp2Node
    if protocol == "MVDR":
        from .mac.mvdr import MvdrNode
        return MvdrNode
    raise ValueError(f"unknown protocol {protocol!r}")


class Simulation:
    def __init__(self, config: SimConfig, *, trace_frames: bool = False, trace_events: bool = False,
                 generators: Optional[Sequence[Generator]] = None,
                 scripts: Optional[dict] = None, log_arrivals: bool = False):
        self.config = config
        self.engine = Engine(trace=trace_events)
        self.streams = RngStreams(config.seed)
        self.topology = Topology(config.n_nodes)
        self.timings = config.timings
        self.ledger = EnergyLedger(self.topology.nodes, config.power_map)
        self.channel = Channel(self.engine, self.timings, self.topology.neighbors(), self.ledger,
                               trace=trace_frames)
        self.channel.memory = max(self.channel.memory,
                                  ms(config.cw_max * config.slot_ms) + 2 * self.timings.t_detect)
        self.records: list[DeliveryRecord] = []
        self.dropped = 0
        self.mac_log: Optional[list] = [] if (trace_frames or trace_events) else None
        self.status = "pending"
        self.report: Optional[RunReport] = None
        cls = _node_class(config.protocol)
        self.mac_distinguishes_priority = cls.distinguishes_priority
        self._setup_protocol(cls)
        self.nodes = {n: cls(self, n) for n in self.topology.nodes}
        if generators is None:
            generators = self.default_generators()
        self.arrivals_log: Optional[list] = [] if log_arrivals else None
        self.traffic = TrafficSource(self.engine, generators,
                                     lambda g: self.rng(g.node, f"traffic-{g.priority.value}"),
                                     self._generated, scripts=scripts,
                                     arrivals_log=self.arrivals_log)
        for node in self.nodes.values():
            node.start()

    def _setup_protocol(self, cls) -> None:
        setup = getattr(cls, "setup_network", None)
        if setup is not None:
            setup(self)

    def default_generators(self) -> list[Generator]:
        cfg = self.config
        gens = []
        for n in self.topology.sensors:
            for prio, pattern, mean_s in (
                    (Priority.URGENT, cfg.pattern_urgent, cfg.mean_interval_urgent_s),
                    (Priority.NORMAL, cfg.pattern_normal, cfg.mean_interval_normal_s)):
                mean = ms(mean_s * 1000.0)
                phase = 0
                if pattern == "CBR" and cfg.cbr_phase == "random":
                    phase = self.rng(n, f"phase-{prio.value}").randint_below(mean)
                gens.append(Generator(Pattern(pattern), mean, prio, n, phase))
        return gens

    # ------------------------------------------------------------- services

    def rng(self, node, purpose: str):
        return self.streams.stream(node, purpose)

    def _generated(self, pkt) -> None:
        self.nodes[pkt.origin].enqueue(pkt)

    @property
    def generated(self) -> int:
        return self.traffic.generated

    def deliver(self, pkt) -> None:
        now = self.engine.now
        hop_delays = []
        prev = pkt.generated_at
        for t in pkt.hop_times:
            hop_delays.append(t - prev)
            prev = t
        self.records.append(DeliveryRecord(pkt.id, pkt.priority, pkt.origin, pkt.generated_at, now,
                                           pkt.hops, pkt.retransmissions, tuple(hop_delays)))

    def drop(self, pkts, node: int) -> None:
        self.dropped += len(pkts)
        if self.mac_log is not None:
            for p in pkts:
                self.mac_log.append((self.engine.now, node, "drop", str(p.id)))

    def mac_event(self, node: int, what: str, detail: str = "") -> None:
        if self.mac_log is not None:
            self.mac_log.append((self.engine.now, node, what, detail))

    # ------------------------------------------------------------------ run

    def _stop(self) -> bool:
        if len(self.records) >= self.config.stop_delivered:
            return True
        # nothing left to generate and nothing left to carry
        return self.traffic.exhausted and self.generated <= len(self.records) + self.dropped

    def run(self) -> RunReport:
        report = self.engine.run(self._stop, until=int(self.config.horizon_s * 1e6))
        if report.termination == "stopped" and len(self.records) < self.config.stop_delivered:
            report.termination = "starved"
            report.diagnostics["reason"] = (f"traffic exhausted after {len(self.records)} "
                                            f"of {self.config.stop_delivered} deliveries")
        self.channel.close()
        self.report = report
        if report.termination == "stopped":
            self.status = "ok"
        else:
            self.status = report.termination
        return report

    def summary(self) -> SummaryRow:
        return summarize(self)

    def mac_log_lines(self) -> list[str]:
        return [f"{t}\t{node}\t{what}\t{detail}" for t, node, what, detail in (self.mac_log or [])]


def run_config(config: SimConfig) -> SummaryRow:
    sim = Simulation(config)
    sim.run()
    return sim.summary()
