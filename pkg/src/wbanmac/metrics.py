"""Energy, delay and delivery accounting."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional

from .common import Priority, RadioState

DEFAULT_POWER_MW = {
    RadioState.TRANSMIT: 52.2,
    RadioState.LISTEN: 56.4,
    RadioState.RECEIVE: 56.4,
    RadioState.IDLE: 1.28,
    RadioState.SLEEP: 0.06,
}


class EnergyLedger:
    """Per-node radio-state intervals, each tagged with the traffic class it served.

    A tag of ``None`` marks background activity (polling, lingering, sleeping,
    beacon tracking) that is not attributable to one priority class.
    """

    def __init__(self, nodes: Iterable[int], power_mw: Optional[dict] = None):
        self.power_mw = dict(DEFAULT_POWER_MW if power_mw is None else power_mw)
        self.intervals: dict[int, list] = {n: [] for n in nodes}

    def add(self, node: int, state: RadioState, start: int, end: int, tag=None) -> None:
        if end < start:
            raise ValueError(f"node {node}: interval ends before it starts")
        self.intervals[node].append((state, start, end, tag))

    def durations(self, node: int) -> dict:
        out: dict = {}
        for state, start, end, _ in self.intervals[node]:
            out[state] = out.get(state, 0) + (end - start)
        return out

    def energy_by_tag(self, node: int) -> dict:
        out: dict = {}
        p = self.power_mw
        for state, start, end, tag in self.intervals[node]:
            out[tag] = out.get(tag, 0.0) + (end - start) * p[state] * 1e-9
        return out


def energy_of(node: int, ledger: EnergyLedger) -> float:
    """Joules consumed by ``node``: sum of interval duration times state power."""
    p = ledger.power_mw
    return sum((end - start) * p[state] for state, start, end, _ in ledger.intervals.get(node, ())) * 1e-9


@dataclass
class DeliveryRecord:
    packet_id: int
    priority: Priority
    origin: int
    generated_at: int
    delivered_at: int
    hops: int
    retransmissions: int = 0
    hop_delays: tuple = ()

    def __post_init__(self):
        if self.delivered_at < self.generated_at:
            raise ValueError(f"packet {self.packet_id} delivered before it was generated")

    @property
    def delay(self) -> int:
        return self.delivered_at - self.generated_at


def average_delay(records: Iterable[DeliveryRecord], priority: Optional[Priority] = None) -> Optional[float]:
    """Mean generation-to-sink delay in ms, or ``None`` when nothing matches."""
    total = 0
    count = 0
    for r in records:
        if priority is None or r.priority is priority:
            total += r.delivered_at - r.generated_at
            count += 1
    if count == 0:
        return None
    return total / count / 1000.0


@dataclass
class SummaryRow:
    protocol: str
    mean_interval_urgent: float
    mean_interval_normal: float
    seed: int
    status: str = "ok"
    delivered: int = 0
    generated: int = 0
    pdr: float = 0.0
    delivered_urgent: int = 0
    delivered_normal: int = 0
    avg_delay_urgent_ms: Optional[float] = None
    avg_delay_normal_ms: Optional[float] = None
    energy_total_J: float = 0.0
    energy_per_node_J: list = field(default_factory=list)
    energy_per_delivered_mJ: Optional[float] = None
    energy_urgent_J: float = 0.0
    energy_normal_J: float = 0.0
    energy_background_J: float = 0.0
    energy_per_delivered_urgent_mJ: Optional[float] = None
    energy_per_delivered_normal_mJ: Optional[float] = None
    dropped: int = 0
    collisions: int = 0
    end_time_s: float = 0.0
    error: str = ""

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_csv_dict(self) -> dict:
        d = asdict(self)
        d["energy_per_node_J"] = ";".join(_fmt(v) for v in self.energy_per_node_J)
        return {k: _fmt(v) for k, v in d.items()}

    @classmethod
    def from_csv_dict(cls, d: dict) -> "SummaryRow":
        kw = {}
        for f in fields(cls):
            raw = d.get(f.name, "")
            if f.name in ("protocol", "status", "error"):
                kw[f.name] = raw
            elif f.name == "energy_per_node_J":
                kw[f.name] = [float(x) for x in raw.split(";")] if raw else []
            elif f.name in ("seed", "delivered", "generated", "delivered_urgent",
                            "delivered_normal", "dropped", "collisions"):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = None if raw == "" else float(raw)
        return cls(**kw)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 9))
    return str(v)


def summarize(run) -> SummaryRow:
    """Collapse a finished :class:`~wbanmac.simulation.Simulation` into one row.

    Network energy counts the sensor nodes only; the sink is mains powered.
    Per-class energy is the radio energy spent on channel accesses that
    carried that class (sender and receiver side, retries included), divided
    over that class's delivered packets. A protocol that cannot tell the
    classes apart reports its aggregate for both.
    """
    cfg = run.config
    records = run.records
    delivered = len(records)
    generated = run.generated
    sensors = run.topology.sensors
    per_node = [energy_of(n, run.ledger) for n in sensors]
    total = sum(per_node)
    by_tag = {Priority.URGENT: 0.0, Priority.NORMAL: 0.0, None: 0.0}
    for n in sensors:
        for tag, e in run.ledger.energy_by_tag(n).items():
            by_tag[tag if tag in by_tag else None] += e
    du = sum(1 for r in records if r.priority is Priority.URGENT)
    dn = delivered - du
    row = SummaryRow(
        protocol=cfg.protocol,
        mean_interval_urgent=cfg.mean_interval_urgent_s,
        mean_interval_normal=cfg.mean_interval_normal_s,
        seed=cfg.seed,
        status=run.status,
        delivered=delivered,
        generated=generated,
        pdr=(delivered / generated) if generated else 0.0,
        delivered_urgent=du,
        delivered_normal=dn,
        avg_delay_urgent_ms=average_delay(records, Priority.URGENT),
        avg_delay_normal_ms=average_delay(records, Priority.NORMAL),
        energy_total_J=total,
        energy_per_node_J=per_node,
        energy_per_delivered_mJ=(total / delivered * 1e3) if delivered else None,
        energy_urgent_J=by_tag[Priority.URGENT],
        energy_normal_J=by_tag[Priority.NORMAL],
        energy_background_J=by_tag[None],
        dropped=run.dropped,
        collisions=run.channel.collisions,
        end_time_s=run.engine.now / 1e6,
    )
    if run.mac_distinguishes_priority:
        if du:
            row.energy_per_delivered_urgent_mJ = row.energy_urgent_J / du * 1e3
        if dn:
            row.energy_per_delivered_normal_mJ = row.energy_normal_J / dn * 1e3
    elif delivered:
        agg = (row.energy_urgent_J + row.energy_normal_J) / delivered * 1e3
        row.energy_per_delivered_urgent_mJ = agg
        row.energy_per_delivered_normal_mJ = agg
    return row
