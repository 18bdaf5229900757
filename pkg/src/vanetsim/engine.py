"""Discrete-event core: integer-nanosecond clock, event queue and seeded streams."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Any, Callable

import numpy as np

NS_PER_S = 1_000_000_000

GLOBAL_TARGET = -1


class SchedulingInPast(ValueError):
    """Raised when an event is scheduled before the current clock."""


def seconds(value: float | int | str | Decimal | Fraction) -> int:
    """Convert seconds to integer nanoseconds.

    Strings and Decimals are converted exactly; floats go through their
    shortest repr so that ``seconds(0.1)`` is exactly 100 ms.
    """
    if isinstance(value, bool):
        raise TypeError("seconds() does not accept bool")
    if isinstance(value, int):
        return value * NS_PER_S
    if isinstance(value, float):
        value = repr(value)
    if isinstance(value, str):
        value = Decimal(value)
    if isinstance(value, Decimal):
        value = Fraction(value)
    ns = value * NS_PER_S
    return int(ns.numerator // ns.denominator) if ns.denominator != 1 else int(ns)


def micros(value: float | int | str) -> int:
    """Convert microseconds to integer nanoseconds (exact for decimal input)."""
    if isinstance(value, float):
        value = repr(value)
    ns = Fraction(Decimal(str(value))) * 1000
    if ns.denominator != 1:
        raise ValueError(f"{value} us is not representable in whole nanoseconds")
    return int(ns)


def format_time(ns: int) -> str:
    """Render nanoseconds as seconds with exactly nine decimals."""
    if ns < 0:
        raise ValueError("negative simulation time")
    whole, frac = divmod(ns, NS_PER_S)
    return f"{whole}.{frac:09d}"


def parse_time(text: str) -> int:
    """Inverse of :func:`format_time` for any decimal seconds string."""
    return seconds(Decimal(text))


class EventHandle:
    """A scheduled event; also the handle used to cancel it."""

    __slots__ = ("fire_at", "seq", "target", "kind", "callback", "args", "state")

    PENDING, FIRED, CANCELLED = 0, 1, 2

    def __init__(self, fire_at, seq, target, kind, callback, args):
        self.fire_at = fire_at
        self.seq = seq
        self.target = target
        self.kind = kind
        self.callback = callback
        self.args = args
        self.state = EventHandle.PENDING

    @property
    def pending(self) -> bool:
        return self.state == EventHandle.PENDING

    def __repr__(self) -> str:
        return f"EventHandle({format_time(self.fire_at)}, seq={self.seq}, {self.kind}@{self.target})"


@dataclass(frozen=True)
class SimStats:
    dispatched: int
    cancelled: int
    clock: int


class Simulator:
    """Time-ordered event queue with a virtual clock.

    Events fire in ``(fire_at, seq)`` order, ``seq`` being the insertion
    counter, so simultaneous events run in the order they were scheduled.
    When ``record`` is true every dispatch is appended to ``log`` as
    ``(fire_at, seq, kind, target)``.
    """

    def __init__(self, record: bool = False):
        self.now = 0
        self._queue: list[tuple[int, int, EventHandle]] = []
        self._seq = 0
        self.dispatched = 0
        self.cancelled = 0
        self.record = record
        self.log: list[tuple[int, int, str, int]] = []

    def schedule(
        self,
        fire_at: int,
        callback: Callable[..., Any],
        *args: Any,
        target: int = GLOBAL_TARGET,
        kind: str = "timer",
    ) -> EventHandle:
        if fire_at < self.now:
            raise SchedulingInPast(
                f"event at {format_time(fire_at) if fire_at >= 0 else fire_at} "
                f"precedes clock {format_time(self.now)}"
            )
        handle = EventHandle(fire_at, self._seq, target, kind, callback, args)
        self._seq += 1
        heapq.heappush(self._queue, (fire_at, handle.seq, handle))
        return handle

    def schedule_in(self, delay: int, callback: Callable[..., Any], *args: Any, **kw: Any) -> EventHandle:
        return self.schedule(self.now + delay, callback, *args, **kw)

    def cancel(self, handle: EventHandle | None) -> bool:
        if handle is None or handle.state != EventHandle.PENDING:
            return False
        handle.state = EventHandle.CANCELLED
        self.cancelled += 1
        return True

    def pending_count(self) -> int:
        return sum(1 for _, _, h in self._queue if h.state == EventHandle.PENDING)

    def run_until(self, end: int) -> SimStats:
        if end < self.now:
            raise SchedulingInPast("run_until target precedes the clock")
        queue = self._queue
        pop = heapq.heappop
        log = self.log if self.record else None
        pending = EventHandle.PENDING
        while queue and queue[0][0] <= end:
            ev = pop(queue)[2]
            if ev.state != pending:
                continue
            self.now = ev.fire_at
            ev.state = EventHandle.FIRED
            self.dispatched += 1
            if log is not None:
                log.append((ev.fire_at, ev.seq, ev.kind, ev.target))
            ev.callback(*ev.args)
        self.now = end
        return SimStats(self.dispatched, self.cancelled, self.now)


class RngStream:
    """Reproducible uniform stream on PCG64.

    Draws are built directly from the raw 64-bit outputs of the bit
    generator (whose sequence numpy keeps stable), not from numpy's
    ``Generator`` methods, so a seed yields the same draws on every
    platform and numpy release.
    """

    algorithm = "pcg64-raw"

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.key = tuple(key)
        self._bits = np.random.PCG64(np.random.SeedSequence(seed, spawn_key=self.key))
        self._raw = self._bits.random_raw

    @classmethod
    def for_node(cls, master_seed: int, node: int) -> "RngStream":
        return cls(master_seed, (1, node))

    @classmethod
    def global_stream(cls, master_seed: int) -> "RngStream":
        return cls(master_seed, (0,))

    def next_u64(self) -> int:
        return int(self._raw())

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in the closed range ``[low, high]``."""
        if high < low:
            raise ValueError("empty range")
        span = high - low
        if span == 0:
            return low
        # rejection sampling on the top bits: unbiased and platform independent
        shift = 64 - span.bit_length()
        while True:
            r = int(self._raw()) >> shift
            if r <= span:
                return low + r

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        return low + (high - low) * ((int(self._raw()) >> 11) * (1.0 / 9007199254740992.0))
