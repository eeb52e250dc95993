"""Flat ``key = value`` experiment configuration.

Omitted keys take their defaults, which reproduce the published simulation
parameter table. Unknown keys, malformed lines and out-of-range values are
rejected with the offending line number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

from .channel import FrameTimings
from .common import RadioState
from .engine import ms

PROTOCOLS = ("ADP", "ADP2", "MVDR")


class ConfigError(ValueError):
    pass


def _key(default, kind="pos", doc=""):
    return field(default=default, metadata={"kind": kind, "doc": doc})


@dataclass
class SimConfig:
    protocol: str = _key("ADP2", "protocol", "ADP, ADP2 or MVDR")
    seed: int = _key(1, "int", "master seed for every random stream")
    stop_delivered: int = _key(1000, "nonneg_int", "stop once this many packets reach the sink")
    horizon_s: float = _key(500_000.0, "pos", "safety limit on virtual time")

    # topology
    n_nodes: int = _key(8, "pos_int", "sensor nodes in the chain")

    # timing (Table I)
    bit_rate_kbps: float = _key(18.78, "pos", "base bit rate")
    t_cycle_ms: float = _key(10_000.0, "pos", "duty-cycle envelope / MVDR superframe period")
    t_wake_ms: float = _key(300.0, "pos", "wake-up time / MVDR active portion")
    t_sleep_ms: float = _key(9_700.0, "pos", "sleep time of the duty-cycle envelope")
    t_poll_ms: float = _key(20.0, "pos", "polling duration")
    t_pi_ms: float = _key(50.0, "pos", "polling interval (mean sleep between polls)")
    t_pre_ms: float = _key(10.0, "pos", "preamble strobe airtime")
    t_pre_pause_ms: float = _key(10.0, "pos", "pause between strobes")
    t_ea_ms: float = _key(10.0, "pos", "early-ack airtime")
    t_data_ms: float = _key(25.0, "pos", "data frame airtime at the base rate")
    t_ack_ms: float = _key(10.05, "pos", "ack / block-ack airtime")
    t_add_ms: float = _key(100.0, "pos", "additional wake-up time after an exchange")
    t_detect_ms: float = _key(7.0, "pos", "channel activity detection time")
    propagation_delay_ms: float = _key(0.0, "nonneg", "propagation delay (body scale: zero)")

    # contention
    cw_max: int = _key(32, "pos_int", "contention window for normal traffic, slots")
    cw_urgent: int = _key(8, "pos_int", "contention window for urgent traffic (ADP2), slots")
    cw_adaptive: bool = _key(False, "bool", "halve the urgent window after each deferral")
    slot_ms: float = _key(1.0, "pos", "backoff slot duration")
    backoff_sense: bool = _key(True, "bool", "keep sensing during backoff and re-sense if a frame was detected")
    max_burst: int = _key(4, "pos_int", "packets concatenated per channel access")
    retry_limit: int = _key(5, "nonneg_int", "retries per hop before a packet is dropped")
    max_strobe_ms: float = _key(0.0, "nonneg", "strobe train limit; 0 means t_pi + t_poll")
    packet_bytes: int = _key(58, "pos_int", "data payload size")

    # radio power
    power_tx_mw: float = _key(52.2, "nonneg")
    power_listen_mw: float = _key(56.4, "nonneg")
    power_idle_mw: float = _key(1.28, "nonneg")
    power_sleep_mw: float = _key(0.06, "nonneg")

    # traffic
    pattern_urgent: str = _key("Poisson", "pattern")
    pattern_normal: str = _key("CBR", "pattern")
    mean_interval_urgent_s: float = _key(2.0, "pos", "mean urgent generation interval per node")
    mean_interval_normal_s: float = _key(2.0, "pos", "mean normal generation interval per node")
    cbr_phase: str = _key("zero", "phase", "zero: arrivals at k*interval; random: per-node offset")

    # polling adaptation
    cv_threshold: float = _key(0.5, "pos")
    cv_window: int = _key(10, "pos_int")
    polling_adaptive: bool = _key(True, "bool", "pick the polling distribution from traffic Cv")
    polling_mode: str = _key("FixedMean", "polling_mode", "FixedMean or TrafficAdaptive")
    polling_mean_cap_ms: float = _key(1_000.0, "pos")

    # ADP2 interruption
    guard_k: float = _key(1.0, "nonneg")
    guard_min_ms: float = _key(50.0, "pos")
    guard_max_ms: float = _key(2_000.0, "pos")
    interrupt_predicted: bool = _key(True, "bool", "interrupt normal transfers on predicted urgent arrivals")
    interrupt_urgent_strobe: bool = _key(True, "bool", "interrupt normal transfers on a live urgent strobe")

    # MVDR superframe
    mvdr_beacon_ms: float = _key(10.0, "pos")
    mvdr_cap_ms: float = _key(200.0, "pos")
    mvdr_gts_slots: int = _key(3, "nonneg_int")
    mvdr_gts_slot_ms: float = _key(30.0, "pos")
    mvdr_rate_urgent_kbps: float = _key(37.56, "pos")

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------ checks

    def validate(self) -> None:
        for f in fields(self):
            _check(f.name, f.metadata["kind"], getattr(self, f.name))
        if not 1 <= self.cw_urgent <= self.cw_max <= 32:
            raise ConfigError("contention windows must satisfy 1 <= cw_urgent <= cw_max <= 32")
        if self.mvdr_rate_urgent_kbps < self.bit_rate_kbps:
            raise ConfigError("mvdr_rate_urgent_kbps must be at least bit_rate_kbps")
        if self.t_wake_ms >= self.t_cycle_ms:
            raise ConfigError("t_wake_ms must be shorter than t_cycle_ms")
        if self.protocol == "MVDR":
            layout = self.mvdr_beacon_ms + self.mvdr_cap_ms + self.mvdr_gts_slots * self.mvdr_gts_slot_ms
            if layout > self.t_wake_ms + 1e-9:
                raise ConfigError(f"MVDR active layout ({layout} ms) exceeds t_wake_ms ({self.t_wake_ms} ms)")

    # --------------------------------------------------------------- derived

    @property
    def timings(self) -> FrameTimings:
        return FrameTimings(t_pre=ms(self.t_pre_ms), t_pre_pause=ms(self.t_pre_pause_ms),
                            t_ea=ms(self.t_ea_ms), t_data=ms(self.t_data_ms),
                            t_ack=ms(self.t_ack_ms), t_detect=ms(self.t_detect_ms),
                            bit_rate=self.bit_rate_kbps * 1000.0)

    @property
    def power_map(self) -> dict:
        return {RadioState.TRANSMIT: self.power_tx_mw, RadioState.LISTEN: self.power_listen_mw,
                RadioState.RECEIVE: self.power_listen_mw, RadioState.IDLE: self.power_idle_mw,
                RadioState.SLEEP: self.power_sleep_mw}

    @property
    def max_strobe_us(self) -> int:
        if self.max_strobe_ms > 0:
            return ms(self.max_strobe_ms)
        return ms(self.t_pi_ms) + ms(self.t_poll_ms)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def echo(self) -> str:
        lines = ["# fully resolved configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {_render(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_CHOICES = {
    "protocol": PROTOCOLS,
    "pattern": ("CBR", "Poisson"),
    "phase": ("zero", "random"),
    "polling_mode": ("FixedMean", "TrafficAdaptive"),
}


def _check(name: str, kind: str, value) -> None:
    if kind in _CHOICES:
        if value not in _CHOICES[kind]:
            raise ConfigError(f"{name}: expected one of {', '.join(_CHOICES[kind])}, got {value!r}")
    elif kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false")
    elif kind in ("pos", "pos_int"):
        if not value > 0:
            raise ConfigError(f"{name}: must be positive, got {value}")
    elif kind in ("nonneg", "nonneg_int"):
        if value < 0:
            raise ConfigError(f"{name}: must be non-negative, got {value}")


def _convert(name: str, kind: str, raw: str):
    if kind in ("int", "pos_int", "nonneg_int"):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {raw!r}") from None
    if kind in ("pos", "nonneg"):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {raw!r}") from None
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{name}: expected true/false, got {raw!r}")
    return raw


_FIELDS = {f.name: f for f in fields(SimConfig)}


def parse_config_text(text: str, source: str = "<config>") -> SimConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if not raw:
            raise ConfigError(f"{source}:{lineno}: missing value for {key!r}")
        kind = _FIELDS[key].metadata["kind"]
        try:
            value = _convert(key, kind, raw)
            _check(key, kind, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
        values[key] = value
    try:
        return SimConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path: Union[str, Path]) -> SimConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: no such config file")
    return parse_config_text(p.read_text(), str(p))


def key_table() -> list[tuple[str, str, str]]:
    return [(f.name, _render(f.default), f.metadata.get("doc", "")) for f in fields(SimConfig)]
