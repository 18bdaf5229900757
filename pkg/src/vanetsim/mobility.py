"""NS-2 mobility scripts: parsing, serialization, waypoint interpolation.

Only the two statement forms that SUMO-to-ns2 converters emit are
understood::

    $node_(3) set X_ 120.5
    $ns_ at 12.0 "$node_(3) setdest 400.0 8.0 22.5"

Also provides a synthetic bidirectional highway generator. It is a
stand-in for a real traced road: lane geometry and speed distribution are
parameters, not measurements.
"""

from __future__ import annotations

import math
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from ._kernels import advance_positions
from .engine import NS_PER_S, RngStream, format_time, parse_time


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class MissingInitialPosition(ValueError):
    def __init__(self, node: int):
        super().__init__(f"node {node} has no initial X_/Y_ position")
        self.node = node


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def distance(self, other: "Position") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True)
class MoveCommand:
    at: int  # ns
    dest: Position
    speed: float  # m/s


@dataclass
class MobilityTrack:
    initial: Position
    commands: list[MoveCommand] = field(default_factory=list)

    def __post_init__(self):
        for prev, cur in zip(self.commands, self.commands[1:]):
            if cur.at <= prev.at:
                raise ValueError("command times must be strictly increasing")
        for c in self.commands:
            if not c.speed > 0 or not math.isfinite(c.speed):
                raise ValueError("speeds must be positive and finite")
        self._legs: list[tuple[float, float, float, float, float, float]] | None = None
        self._starts: list[float] | None = None

    @property
    def max_speed(self) -> float:
        return max((c.speed for c in self.commands), default=0.0)

    def legs(self) -> list[tuple[float, float, float, float, float, float]]:
        """Piecewise-linear motion as ``(t0, x0, y0, vx, vy, t_arrive)`` in seconds.

        The first leg is the rest at the initial position from t=0.
        """
        if self._legs is None:
            legs = [(0.0, self.initial.x, self.initial.y, 0.0, 0.0, 0.0)]
            for cmd in self.commands:
                t0 = cmd.at / NS_PER_S
                x, y = _eval_leg(legs[-1], t0)
                dx, dy = cmd.dest.x - x, cmd.dest.y - y
                dist = math.hypot(dx, dy)
                if dist == 0.0:
                    legs.append((t0, x, y, 0.0, 0.0, t0))
                else:
                    vx, vy = dx / dist * cmd.speed, dy / dist * cmd.speed
                    legs.append((t0, x, y, vx, vy, t0 + dist / cmd.speed))
            self._legs = legs
            self._starts = [leg[0] for leg in legs]
        return self._legs

    def position_at(self, t: int) -> Position:
        return position_at(self, t)

    def motion_interval(self) -> tuple[float, float] | None:
        """First departure and last arrival in seconds, or None for a parked node."""
        moving = [leg for leg in self.legs() if leg[3] or leg[4]]
        if not moving:
            return None
        return moving[0][0], moving[-1][5]


def _eval_leg(leg, t: float) -> tuple[float, float]:
    t0, x0, y0, vx, vy, t_arr = leg
    if vx == 0.0 and vy == 0.0:
        return x0, y0
    dt = min(t, t_arr) - t0
    return x0 + vx * dt, y0 + vy * dt


def position_at(track: MobilityTrack, t: int) -> Position:
    """Position of ``track`` at ``t`` nanoseconds."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    legs = track.legs()
    ts = t / NS_PER_S
    i = bisect_right(track._starts, ts) - 1
    x, y = _eval_leg(legs[max(i, 0)], ts)
    return Position(x, y)


@dataclass
class MobilityScript:
    tracks: list[MobilityTrack]

    @property
    def node_count(self) -> int:
        return len(self.tracks)


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_SET_RE = re.compile(rf"^\$node_\((\d+)\)\s+set\s+([XYZ])_\s+({_NUM})$")
_AT_RE = re.compile(
    rf'^\$ns_\s+at\s+({_NUM})\s+"\s*\$node_\((\d+)\)\s+setdest\s+({_NUM})\s+({_NUM})\s+({_NUM})\s*"$'
)


def _finite(text: str, lineno: int) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ParseError(lineno, f"non-finite number {text!r}")
    return v


def parse_mobility_script(text: str | TextIO | Iterable[str]) -> MobilityScript:
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = text
    init: dict[int, dict[str, float]] = {}
    cmds: dict[int, list[MoveCommand]] = {}
    seen: set[int] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _SET_RE.match(line)
        if m:
            node, axis = int(m.group(1)), m.group(2)
            init.setdefault(node, {})[axis] = _finite(m.group(3), lineno)
            seen.add(node)
            continue
        m = _AT_RE.match(line)
        if m:
            try:
                at = parse_time(m.group(1))
            except ArithmeticError:
                raise ParseError(lineno, f"bad time {m.group(1)!r}") from None
            if at < 0:
                raise ParseError(lineno, "negative time")
            node = int(m.group(2))
            x, y, speed = (_finite(m.group(k), lineno) for k in (3, 4, 5))
            if speed <= 0:
                raise ParseError(lineno, f"speed must be positive, got {speed}")
            lst = cmds.setdefault(node, [])
            if lst and at <= lst[-1].at:
                raise ParseError(lineno, f"node {node} command times not strictly increasing")
            lst.append(MoveCommand(at, Position(x, y), speed))
            seen.add(node)
            continue
        raise ParseError(lineno, f"unrecognized statement: {line}")
    if not seen:
        return MobilityScript([])
    tracks = []
    for node in range(max(seen) + 1):
        pos = init.get(node, {})
        if "X" not in pos or "Y" not in pos:
            raise MissingInitialPosition(node)
        tracks.append(MobilityTrack(Position(pos["X"], pos["Y"]), cmds.get(node, [])))
    return MobilityScript(tracks)


def serialize_mobility_script(script: MobilityScript) -> str:
    """Emit an NS-2 script that :func:`parse_mobility_script` reads back exactly."""
    out = []
    for i, tr in enumerate(script.tracks):
        out.append(f"$node_({i}) set X_ {tr.initial.x!r}")
        out.append(f"$node_({i}) set Y_ {tr.initial.y!r}")
        out.append(f"$node_({i}) set Z_ 0.0")
    for i, tr in enumerate(script.tracks):
        for c in tr.commands:
            out.append(
                f'$ns_ at {format_time(c.at)} "$node_({i}) setdest {c.dest.x!r} {c.dest.y!r} {c.speed!r}"'
            )
    return "\n".join(out) + "\n"


def static_script(points: Iterable[tuple[float, float]]) -> MobilityScript:
    return MobilityScript([MobilityTrack(Position(float(x), float(y))) for x, y in points])


@dataclass(frozen=True)
class HighwayParams:
    length: float
    lane_gap: float
    node_count: int
    speed_range: tuple[float, float]
    start_stagger: float  # seconds between consecutive departures

    def validate(self) -> None:
        lo, hi = self.speed_range
        if not self.length > 0 or not math.isfinite(self.length):
            raise InvalidParams("length must be positive")
        if not self.lane_gap >= 0:
            raise InvalidParams("lane_gap must be nonnegative")
        if self.node_count < 2 or self.node_count % 2:
            raise InvalidParams("node_count must be an even integer >= 2")
        if not 0 < lo <= hi:
            raise InvalidParams("speed_range must satisfy 0 < min <= max")
        if not self.start_stagger >= 0:
            raise InvalidParams("start_stagger must be nonnegative")


def generate_highway(p: HighwayParams, rng: RngStream) -> MobilityScript:
    """Two opposite lanes: even ids eastbound on y=0, odd ids westbound on y=lane_gap."""
    p.validate()
    lo, hi = p.speed_range
    tracks = []
    for i in range(p.node_count):
        speed = lo if lo == hi else rng.uniform(lo, hi)
        depart = round(i * p.start_stagger * NS_PER_S)
        if i % 2 == 0:
            start, end = Position(0.0, 0.0), Position(float(p.length), 0.0)
        else:
            start, end = Position(float(p.length), float(p.lane_gap)), Position(0.0, float(p.lane_gap))
        tracks.append(MobilityTrack(start, [MoveCommand(depart, end, speed)]))
    return MobilityScript(tracks)


class PositionField:
    """Vectorised positions of every node, for queries at nondecreasing times."""

    def __init__(self, script: MobilityScript):
        n = script.node_count
        rows = []
        offsets = np.zeros(n + 1, dtype=np.int64)
        for i, tr in enumerate(script.tracks):
            legs = tr.legs()
            rows.extend(legs)
            offsets[i + 1] = offsets[i] + len(legs)
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, 6)
        self._t0, self._x0, self._y0 = arr[:, 0], arr[:, 1], arr[:, 2]
        self._vx, self._vy, self._tarr = arr[:, 3], arr[:, 4], arr[:, 5]
        self._moving = (self._vx != 0.0) | (self._vy != 0.0)
        self._first = offsets[:-1].copy()
        self._last = offsets[1:] - 1
        self._cursor = self._first.copy()
        self._static = not bool(self._moving.any())
        self._cached_t: int | None = None
        self._cached: tuple[np.ndarray, np.ndarray] | None = None
        self.n = n

    def positions(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        if self._cached_t == t:
            return self._cached
        if self._static:
            if self._cached is None:
                self._cached = (self._x0[self._first].copy(), self._y0[self._first].copy())
            self._cached_t = t
            return self._cached
        ts = t / NS_PER_S
        if self._cached_t is not None and t < self._cached_t:
            self._cursor = self._first.copy()
        x = np.empty(self.n)
        y = np.empty(self.n)
        advance_positions(ts, self._t0, self._x0, self._y0, self._vx, self._vy, self._tarr,
                          self._moving, self._cursor, self._last, x, y)
        self._cached_t, self._cached = t, (x, y)
        return x, y
