"""Packet generation and inter-arrival statistics."""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

from .common import Priority
from .engine import Engine, RngStream, ms

DEFAULT_PACKET_BYTES = 58


class Pattern(str, Enum):
    CBR = "CBR"
    POISSON = "Poisson"


class Packet:
    __slots__ = ("id", "origin", "priority", "generated_at", "size",
                 "hops", "retransmissions", "hop_times")

    def __init__(self, id: int, origin: int, priority: Priority, generated_at: int,
                 size: int = DEFAULT_PACKET_BYTES):
        self.id = id
        self.origin = origin
        self.priority = priority
        self.generated_at = generated_at
        self.size = size
        self.hops = 0
        self.retransmissions = 0
        self.hop_times: list = []

    def __repr__(self) -> str:
        return f"Packet({self.id}, {self.priority.value}, origin={self.origin}, t={self.generated_at})"


@dataclass(frozen=True)
class Generator:
    pattern: Pattern
    mean_interval: int  # microseconds
    priority: Priority
    node: int
    phase: int = 0      # CBR only: first arrival at phase + mean_interval

    def __post_init__(self):
        if self.mean_interval <= 0:
            raise ValueError("mean_interval must be positive")


def next_arrival(g: Generator, rng: Optional[RngStream], previous: int) -> int:
    """Time of the arrival following ``previous`` (never the same microsecond)."""
    if g.pattern is Pattern.CBR:
        return previous + g.mean_interval
    gap = int(round(rng.exponential(g.mean_interval)))
    return previous + max(gap, 1)


class ArrivalHistory:
    """Ring buffer of the last ``window`` inter-arrival durations."""

    def __init__(self, window: int = 10):
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = window
        self.samples: deque = deque(maxlen=window)
        self.last: Optional[int] = None

    def observe(self, t: int) -> None:
        if self.last is not None:
            gap = t - self.last
            if gap > 0:
                self.samples.append(gap)
        self.last = t

    def extend(self, gaps: Iterable[int]) -> None:
        for g in gaps:
            if g <= 0:
                raise ValueError("inter-arrival samples must be positive")
            self.samples.append(g)

    def __len__(self) -> int:
        return len(self.samples)

    def mean(self) -> float:
        return sum(self.samples) / len(self.samples)

    def pstdev(self) -> float:
        n = len(self.samples)
        mu = sum(self.samples) / n
        return math.sqrt(sum((x - mu) ** 2 for x in self.samples) / n)


def coefficient_of_variation(h) -> Optional[float]:
    """Population std-dev over mean of the samples; ``None`` with fewer than two."""
    samples = list(h.samples) if isinstance(h, ArrivalHistory) else list(h)
    n = len(samples)
    if n < 2:
        return None
    mu = sum(samples) / n
    if all(x == samples[0] for x in samples):
        return 0.0
    var = sum((x - mu) ** 2 for x in samples) / n
    return math.sqrt(var) / mu


def classify(cv: float, threshold: float = 0.5) -> Pattern:
    if cv < 0:
        raise ValueError("coefficient of variation cannot be negative")
    return Pattern.CBR if cv < threshold else Pattern.POISSON


@dataclass(frozen=True)
class UrgentPrediction:
    expected_at: int = 0
    guard_before: int = 0
    guard_after: int = 0
    valid: bool = False

    @property
    def window(self) -> tuple[int, int]:
        return self.expected_at - self.guard_before, self.expected_at + self.guard_after


INVALID_PREDICTION = UrgentPrediction()


def predict_next_urgent(h: ArrivalHistory, last_urgent: Optional[int], k: float = 1.0,
                        guard_min: int = ms(50), guard_max: int = ms(2000)) -> UrgentPrediction:
    if len(h) < 2 or last_urgent is None:
        return INVALID_PREDICTION
    guard = max(k * h.pstdev(), guard_min)
    guard = int(round(min(guard, guard_max)))
    return UrgentPrediction(last_urgent + int(round(h.mean())), guard, guard, True)


class TrafficSource:
    """Drives every generator on the engine and hands packets to ``deliver``."""

    def __init__(self, engine: Engine, generators: Sequence[Generator],
                 rng_for: Callable[[Generator], RngStream],
                 deliver: Callable[[Packet], None],
                 scripts: Optional[dict] = None,
                 arrivals_log: Optional[list] = None):
        self.engine = engine
        self.deliver = deliver
        self.generated = 0
        self._ids = itertools.count(1)
        self.arrivals_log = arrivals_log
        self.pending = 0  # scheduled arrival events not yet fired
        for g in generators:
            rng = rng_for(g)
            first = next_arrival(g, rng, g.phase)
            engine.schedule(first, self._fire, g, rng, kind="arrival", target=g.node)
            self.pending += 1
        for (node, priority), times in (scripts or {}).items():
            for t in sorted(times):
                engine.schedule(t, self._scripted, node, priority, kind="arrival", target=node)
                self.pending += 1

    @property
    def exhausted(self) -> bool:
        return self.pending == 0

    def _scripted(self, node: int, priority: Priority) -> None:
        self.pending -= 1
        self._emit(node, priority)

    def _fire(self, g: Generator, rng: RngStream) -> None:
        self._emit(g.node, g.priority)
        now = self.engine.now
        self.engine.schedule(next_arrival(g, rng, now), self._fire, g, rng,
                             kind="arrival", target=g.node)

    def _emit(self, node: int, priority: Priority) -> None:
        pkt = Packet(next(self._ids), node, priority, self.engine.now)
        self.generated += 1
        if self.arrivals_log is not None:
            self.arrivals_log.append((pkt.generated_at, node, priority.value, pkt.id))
        self.deliver(pkt)
