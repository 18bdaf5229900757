from __future__ import annotations

import enum
import itertools
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

BROADCAST = -1
IP_HEADER_BYTES = 20


class RoutingProtocolKind(str, enum.Enum):
    Aodv = "aodv"
    Dsr = "dsr"

    @classmethod
    def parse(cls, name: "str | RoutingProtocolKind") -> "RoutingProtocolKind":
        if isinstance(name, RoutingProtocolKind):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown routing protocol {name!r} (expected aodv or dsr)") from None


class MalformedControl(RuntimeError):
    """A control message that no correct node could have produced."""


class Packet:
    """Network-layer packet: application data (``ptype == 'cbr'``) or control."""

    __slots__ = (
        "pid", "ptype", "src", "dst", "size", "msg", "created", "ttl",
        "route", "cursor", "salvage", "payload_bytes", "key",
    )

    def __init__(self, pid, ptype, src, dst, size, msg=None, created=0, ttl=32,
                 route=None, cursor=0, salvage=0, payload_bytes=0, key=None):
        self.pid = pid
        self.ptype = ptype
        self.src = src
        self.dst = dst
        self.size = size
        self.msg = msg
        self.created = created
        self.ttl = ttl
        self.route = route
        self.cursor = cursor
        self.salvage = salvage
        self.payload_bytes = payload_bytes
        self.key = key

    @property
    def is_data(self) -> bool:
        return self.msg is None

    def copy(self) -> "Packet":
        return Packet(self.pid, self.ptype, self.src, self.dst, self.size, self.msg, self.created,
                      self.ttl, self.route, self.cursor, self.salvage, self.payload_bytes, self.key)

    def __repr__(self) -> str:
        return f"Packet({self.pid} {self.ptype} {self.src}->{self.dst} {self.size}B)"


def data_packet(flow: int, seq: int, src: int, dst: int, payload_bytes: int, created: int,
                ttl: int = 32) -> Packet:
    return Packet(f"{flow}.{seq}", "cbr", src, dst, payload_bytes + IP_HEADER_BYTES,
                  created=created, ttl=ttl, payload_bytes=payload_bytes, key=(flow, seq))


class ControlIds:
    """Run-wide counter for ``ctl.N`` packet ids."""

    def __init__(self) -> None:
        self._it: Iterator[int] = itertools.count()

    def next(self) -> str:
        return f"ctl.{next(self._it)}"


# -- actions -----------------------------------------------------------------

@dataclass(slots=True)
class SendControl:
    packet: Packet
    next_hop: int  # BROADCAST for flooding
    delay: int = 0  # ns, rebroadcast jitter


@dataclass(slots=True)
class ForwardData:
    packet: Packet
    next_hop: int


@dataclass(slots=True)
class DeliverUp:
    packet: Packet


@dataclass(slots=True)
class BufferData:
    packet: Packet


@dataclass(slots=True)
class DropData:
    packet: Packet
    reason: str


@dataclass(slots=True)
class SetTimer:
    key: Any
    at: int


NRTE = "NRTE"
RET = "RET"
TTL = "TTL"


class SeenCache:
    """Duplicate-suppression memory for flooded requests, expiring FIFO."""

    def __init__(self, lifetime: int):
        self.lifetime = lifetime
        self._d: OrderedDict[tuple[int, int], int] = OrderedDict()

    def check_and_add(self, key: tuple[int, int], now: int) -> bool:
        """True if ``key`` was already seen (and still remembered)."""
        d = self._d
        while d:
            k, exp = next(iter(d.items()))
            if exp > now:
                break
            d.popitem(last=False)
        if key in d:
            return True
        d[key] = now + self.lifetime
        return False

    def __len__(self) -> int:
        return len(self._d)


class FloodMemory:
    """Run-wide seen-request memory, one expiry per (request, node).

    Behaves like one :class:`SeenCache` per node, but lets the stack test a
    whole set of receivers at once.
    """

    def __init__(self, n: int, lifetime: int):
        self.n = n
        self.lifetime = lifetime
        self._arr: dict[Any, np.ndarray] = {}
        self._last: dict[Any, int] = {}
        self._ops = 0

    def check_and_add(self, node: int, key, now: int) -> bool:
        arr = self._arr.get(key)
        if arr is None:
            self._ops += 1
            if self._ops & 1023 == 0:
                self._prune(now)
            arr = self._arr[key] = np.zeros(self.n, dtype=np.int64)
        elif arr[node] > now:
            return True
        exp = now + self.lifetime
        arr[node] = exp
        self._last[key] = exp
        return False

    def seen_mask(self, key, nodes: np.ndarray, at: np.ndarray) -> np.ndarray:
        """Which ``nodes`` will still remember ``key`` at the instants ``at``."""
        arr = self._arr.get(key)
        if arr is None:
            return np.zeros(nodes.size, dtype=bool)
        return arr[nodes] > at

    def _prune(self, now: int) -> None:
        dead = [k for k, t in self._last.items() if t <= now]
        for k in dead:
            del self._arr[k]
            del self._last[k]

    def view(self, node: int) -> "FloodMemoryView":
        return FloodMemoryView(self, node)


class FloodMemoryView:
    __slots__ = ("memory", "node")

    def __init__(self, memory: FloodMemory, node: int):
        self.memory = memory
        self.node = node

    def check_and_add(self, key, now: int) -> bool:
        return self.memory.check_and_add(self.node, key, now)


class RoutingProtocol:
    """Common contract of the two on-demand protocols.

    Every handler mutates this node's state and returns a list of actions
    for the stack to execute; nothing else leaves the protocol object.
    """

    kind: RoutingProtocolKind

    def __init__(self, node: int, rng=None, ids: ControlIds | None = None):
        self.node = node
        self.rng = rng
        self.ids = ids or ControlIds()
        self.discovery_log: list[tuple[int, int, int]] = []  # (dest, hops, time)

    def originate(self, packet: Packet, now: int) -> list:
        raise NotImplementedError

    def handle_control(self, packet: Packet, prev: int, now: int) -> list:
        raise NotImplementedError

    def handle_data(self, packet: Packet, prev: int, now: int) -> list:
        raise NotImplementedError

    def handle_link_failure(self, next_hop: int, packet: Packet | None, now: int) -> list:
        raise NotImplementedError

    def on_timer(self, key: Any, now: int) -> list:
        raise NotImplementedError

    def route_lookup(self, dest: int, now: int):
        raise NotImplementedError

    def handle_overheard(self, packet: Packet, now: int) -> list:
        return []

    def pending_packets(self) -> list[Packet]:
        """Data packets held in discovery buffers."""
        return []
