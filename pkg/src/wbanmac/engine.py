"""Virtual-time event loop and seeded random streams.

Time is an integer count of microseconds. Events are ordered by
``(fire_at, seq)`` where ``seq`` is a per-engine insertion counter, so
simultaneous events fire in the order they were scheduled.

Randomness comes from independent streams keyed by ``(node, purpose)``.
Each stream is a Mersenne Twister (``random.Random``) seeded with the
first 8 bytes of ``SHA-256("<seed>:<node>:<purpose>")`` read big-endian.
Draws use only ``Random.random()`` (53-bit floats), which CPython
guarantees to be reproducible across platforms for a given integer seed.
"""
from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

MS = 1_000
SECOND = 1_000_000


def ms(value: float) -> int:
    """Convert milliseconds to integer microseconds (exact for Table-style values)."""
    return int(round(value * MS))


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current virtual time."""


class Event:
    __slots__ = ("fire_at", "seq", "kind", "target", "callback", "args", "state")

    PENDING, FIRED, CANCELLED = 0, 1, 2

    def __init__(self, fire_at, seq, kind, target, callback, args):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self.target = target
        self.callback = callback
        self.args = args
        self.state = Event.PENDING

    def __lt__(self, other: "Event") -> bool:
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)

    @property
    def pending(self) -> bool:
        return self.state == Event.PENDING

    def __repr__(self) -> str:
        return f"Event(t={self.fire_at}, seq={self.seq}, kind={self.kind!r}, target={self.target})"


@dataclass
class RunReport:
    end_time: int
    termination: str  # "stopped", "starved" or "horizon"
    events_dispatched: int
    pending_events: int
    diagnostics: dict = field(default_factory=dict)


class Engine:
    """Single-run discrete-event loop. Holds no global state."""

    def __init__(self, trace: bool = False):
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self._live = 0
        self.dispatched = 0
        self.trace: Optional[list] = [] if trace else None

    def schedule(self, fire_at: int, callback: Callable, *args: Any,
                 kind: str = "timer", target: Any = None) -> Event:
        if fire_at < self.now:
            raise SchedulingError(
                f"cannot schedule {kind!r} at {fire_at} us, now is {self.now} us")
        ev = Event(fire_at, self._seq, kind, target, callback, args)
        self._seq += 1
        self._live += 1
        heapq.heappush(self._heap, (fire_at, ev.seq, ev))
        return ev

    def after(self, delay: int, callback: Callable, *args: Any,
              kind: str = "timer", target: Any = None) -> Event:
        if delay < 0:
            raise SchedulingError(f"cannot schedule {kind!r} {delay} us in the past")
        fire_at = self.now + delay
        seq = self._seq
        ev = Event(fire_at, seq, kind, target, callback, args)
        self._seq = seq + 1
        self._live += 1
        heapq.heappush(self._heap, (fire_at, seq, ev))
        return ev

    def cancel(self, ev: Optional[Event]) -> bool:
        if ev is None or ev.state != Event.PENDING:
            return False
        ev.state = Event.CANCELLED
        self._live -= 1
        return True

    @property
    def pending_count(self) -> int:
        return self._live

    def run(self, stop: Optional[Callable[[], bool]] = None,
            until: Optional[int] = None) -> RunReport:
        """Dispatch events in time order until ``stop()`` holds.

        ``until`` is an optional virtual-time horizon; events after it stay queued.
        """
        heap = self._heap
        pop = heapq.heappop
        trace = self.trace
        if stop is not None and stop():
            return self._report("stopped")
        while heap:
            fire_at, _, ev = heap[0]
            if until is not None and fire_at > until:
                self.now = until
                return self._report("horizon")
            pop(heap)
            if ev.state != Event.PENDING:
                continue
            ev.state = Event.FIRED
            self._live -= 1
            self.now = fire_at
            self.dispatched += 1
            if trace is not None:
                trace.append((fire_at, ev.seq, ev.kind, ev.target))
            ev.callback(*ev.args)
            if stop is not None and stop():
                return self._report("stopped")
        return self._report("starved" if stop is not None else "stopped")

    def _report(self, termination: str) -> RunReport:
        diag = {}
        if termination == "starved":
            diag["reason"] = "event queue empty before stop condition held"
        return RunReport(self.now, termination, self.dispatched, self._live, diag)

    def trace_lines(self) -> list[str]:
        if self.trace is None:
            return []
        return [f"{t}\t{seq}\t{kind}\t{target}" for t, seq, kind, target in self.trace]


# --------------------------------------------------------------------------
# random streams


@dataclass(frozen=True)
class Deterministic:
    value: int


@dataclass(frozen=True)
class Exponential:
    mean: float

    def __post_init__(self):
        if not self.mean > 0:
            raise ValueError(f"exponential mean must be positive, got {self.mean}")


@dataclass(frozen=True)
class UniformInt:
    n: int  # support is {0, ..., n-1}

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"uniform-integer range must be non-empty, got n={self.n}")


Distribution = Union[Deterministic, Exponential, UniformInt]


def stream_seed(seed: int, node: Any, purpose: str) -> int:
    digest = hashlib.sha256(f"{seed}:{node}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class RngStream:
    __slots__ = ("seed", "stream_id", "_rand")

    def __init__(self, seed: int, node: Any, purpose: str):
        self.seed = seed
        self.stream_id = (node, purpose)
        self._rand = random.Random(stream_seed(seed, node, purpose))

    def uniform(self) -> float:
        return self._rand.random()

    def exponential(self, mean: float) -> float:
        return -mean * math.log(1.0 - self._rand.random())

    def randint_below(self, n: int) -> int:
        return min(int(self._rand.random() * n), n - 1)


def draw(stream: RngStream, dist: Distribution) -> int:
    """Draw one sample; durations are rounded to whole microseconds."""
    if isinstance(dist, Deterministic):
        return dist.value
    if isinstance(dist, Exponential):
        return int(round(stream.exponential(dist.mean)))
    if isinstance(dist, UniformInt):
        return stream.randint_below(dist.n)
    raise TypeError(f"unsupported distribution {dist!r}")


class RngStreams:
    """Lazily created, independent streams for one run."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict = {}

    def stream(self, node: Any, purpose: str) -> RngStream:
        key = (node, purpose)
        s = self._streams.get(key)
        if s is None:
            s = self._streams[key] = RngStream(self.seed, node, purpose)
        return s
