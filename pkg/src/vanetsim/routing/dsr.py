"""DSR: flooded route requests, source-routed replies and data, route cache.

Only the target answers a request (no cached-route replies) and the reply
returns along the reversed discovered path, relying on bidirectional links.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from ..engine import seconds
from .common import (
    BROADCAST,
    IP_HEADER_BYTES,
    NRTE,
    RET,
    BufferData,
    ControlIds,
    DeliverUp,
    DropData,
    ForwardData,
    MalformedControl,
    Packet,
    RoutingProtocol,
    RoutingProtocolKind,
    SeenCache,
    SendControl,
    SetTimer,
)


def header_bytes(addresses: int) -> int:
    return 4 + 4 * addresses


@dataclass(frozen=True)
class DsrParams:
    max_route_hops: int = 35
    rreq_retries: int = 3
    request_period: int = seconds("0.5")
    jitter: bool = True
    jitter_max: int = seconds("0.01")
    salvage_limit: int = 1
    buffer_capacity: int = 64
    cache_capacity: int = 64
    seen_lifetime: int = seconds("5.6")
    promiscuous: bool = False


@dataclass(frozen=True, slots=True)
class RouteRequest:
    req_id: int
    orig: int
    target: int
    path: tuple[int, ...]
    ttl: int


@dataclass(frozen=True, slots=True)
class RouteReply:
    route: tuple[int, ...]  # originator ... target


@dataclass(frozen=True, slots=True)
class RouteError:
    link: tuple[int, int]  # broken hop (from, to)
    notify: int  # source of the packet that hit the break


@dataclass(frozen=True, slots=True)
class DsrSourceRoute:
    hops: tuple[int, ...]
    cursor: int = 0

    def __post_init__(self):
        if len(self.hops) < 2:
            raise ValueError("a source route needs at least two nodes")
        if len(set(self.hops)) != len(self.hops):
            raise ValueError(f"source route {self.hops} repeats a node")
        if not 0 <= self.cursor < len(self.hops):
            raise ValueError("cursor out of bounds")


def is_simple_path(route) -> bool:
    return len(set(route)) == len(route)


class DsrRouteCache:
    """Path cache: whole paths from this node, the route to any node on a
    path being the prefix that ends there.

    Holds at most ``capacity`` paths and evicts the oldest first. A broken
    link truncates every path through it.
    """

    def __init__(self, owner: int, capacity: int = 64):
        self.owner = owner
        self.capacity = capacity
        self._paths: dict[int, tuple[int, ...]] = {}  # insertion order -> path
        self._known: dict[tuple[int, ...], int] = {}
        self._order = 0

    def __len__(self) -> int:
        return len(self._paths)

    def paths(self) -> list[tuple[int, ...]]:
        return list(self._paths.values())

    def add(self, route: tuple[int, ...], now: int) -> bool:
        route = tuple(route)
        if len(route) < 2 or route[0] != self.owner or not is_simple_path(route):
            return False
        return self._insert(route)

    def _insert(self, route: tuple[int, ...]) -> bool:
        if route in self._known:
            return False
        if len(self._paths) >= self.capacity:
            o = next(iter(self._paths))
            del self._known[self._paths.pop(o)]
        self._order += 1
        self._paths[self._order] = route
        self._known[route] = self._order
        return True

    def learn(self, path: tuple[int, ...], now: int) -> None:
        """Cache the parts of ``path`` reachable from the owner, in both directions."""
        try:
            i = path.index(self.owner)
        except ValueError:
            return
        if not is_simple_path(path):
            return
        if i + 1 < len(path):
            self._insert(tuple(path[i:]))
        if i > 0:
            self._insert(tuple(reversed(path[: i + 1])))

    def lookup(self, dest: int) -> tuple[int, ...] | None:
        best = None
        for p in self._paths.values():
            if dest in p:
                k = p.index(dest)
                if k and (best is None or k < best):
                    best, found = k, p
        return None if best is None else found[: best + 1]

    def remove_link(self, a: int, b: int) -> int:
        """Truncate every path using link a-b (either direction); returns how many changed."""
        changed = 0
        for o, p in list(self._paths.items()):
            if a not in p or b not in p:
                continue
            cut = next((k for k in range(len(p) - 1) if {p[k], p[k + 1]} == {a, b}), None)
            if cut is None:
                continue
            changed += 1
            del self._known[p]
            keep = p[: cut + 1]
            if len(keep) < 2 or keep in self._known:
                del self._paths[o]
            else:
                self._paths[o] = keep
                self._known[keep] = o
        return changed


class _Discovery:
    __slots__ = ("attempt", "gen")

    def __init__(self, gen: int):
        self.attempt = 0
        self.gen = gen


class Dsr(RoutingProtocol):
    kind = RoutingProtocolKind.Dsr

    def __init__(self, node: int, params: DsrParams | None = None, rng=None, ids: ControlIds | None = None,
                 seen=None):
        super().__init__(node, rng, ids)
        self.params = params or DsrParams()
        self.cache = DsrRouteCache(node, self.params.cache_capacity)
        self.seen = seen if seen is not None else SeenCache(self.params.seen_lifetime)
        self.req_id = 0
        self.discoveries: dict[int, _Discovery] = {}
        self.buffer: dict[int, deque[Packet]] = {}
        self._gen = 0

    def route_lookup(self, dest: int, now: int) -> tuple[int, ...] | None:
        return self.cache.lookup(dest)

    def _jitter(self) -> int:
        p = self.params
        if not p.jitter or self.rng is None:
            return 0
        return self.rng.integer(0, p.jitter_max)

    def _attach(self, packet: Packet, route: tuple[int, ...]) -> ForwardData:
        if not is_simple_path(route):
            raise AssertionError(f"DSR source route {route} has a cycle")
        old = header_bytes(len(packet.route)) if packet.route else 0
        packet.size += header_bytes(len(route)) - old
        packet.route = route
        packet.cursor = 1
        return ForwardData(packet, route[1])

    # -- discovery -----------------------------------------------------------

    def originate(self, packet: Packet, now: int) -> list:
        route = self.cache.lookup(packet.dst)
        if route is not None:
            return [self._attach(packet, route)]
        return self._buffer_and_discover(packet, now)

    def _buffer_and_discover(self, packet: Packet, now: int) -> list:
        actions = []
        q = self.buffer.setdefault(packet.dst, deque())
        if len(q) >= self.params.buffer_capacity:
            actions.append(DropData(q.popleft(), NRTE))
        q.append(packet)
        actions.append(BufferData(packet))
        if packet.dst not in self.discoveries:
            self._gen += 1
            self.discoveries[packet.dst] = _Discovery(self._gen)
            actions.extend(self._send_request(packet.dst, now))
        return actions

    def _send_request(self, target: int, now: int) -> list:
        d = self.discoveries[target]
        self.req_id += 1
        self.seen.check_and_add((self.node, self.req_id), now)
        msg = RouteRequest(self.req_id, self.node, target, (self.node,), self.params.max_route_hops)
        pkt = Packet(self.ids.next(), "DSR_RREQ", self.node, BROADCAST,
                     IP_HEADER_BYTES + header_bytes(1), msg=msg)
        wait = self.params.request_period * (2 ** d.attempt)
        return [SendControl(pkt, BROADCAST), SetTimer(("rreq", target, d.gen), now + wait)]

    def on_timer(self, key, now: int) -> list:
        tag, target, gen = key
        d = self.discoveries.get(target)
        if tag != "rreq" or d is None or d.gen != gen:
            return []
        if self.cache.lookup(target) is not None:
            del self.discoveries[target]
            return self._release(target)
        d.attempt += 1
        if d.attempt >= self.params.rreq_retries:
            del self.discoveries[target]
            return [DropData(pkt, NRTE) for pkt in self.buffer.pop(target, ())]
        return self._send_request(target, now)

    def _release(self, dest: int) -> list:
        q = self.buffer.pop(dest, None)
        if not q:
            return []
        route = self.cache.lookup(dest)
        return [self._attach(pkt, route) for pkt in q]

    def _release_all(self, now: int) -> list:
        actions = []
        for dest in list(self.buffer):
            if self.cache.lookup(dest) is not None:
                self.discoveries.pop(dest, None)
                actions.extend(self._release(dest))
        return actions

    def pending_packets(self) -> list[Packet]:
        return [p for q in self.buffer.values() for p in q]

    # -- control -------------------------------------------------------------

    def handle_control(self, packet: Packet, prev: int, now: int) -> list:
        msg = packet.msg
        if isinstance(msg, RouteRequest):
            return self._on_request(packet, msg, now)
        if isinstance(msg, RouteReply):
            return self._on_reply(packet, msg, now)
        if isinstance(msg, RouteError):
            return self._on_error(packet, msg, now)
        raise MalformedControl(f"DSR node {self.node} got {msg!r}")

    def _on_request(self, packet: Packet, m: RouteRequest, now: int) -> list:
        if not m.path or m.path[0] != m.orig or not is_simple_path(m.path):
            raise MalformedControl(f"bad request path {m.path}")
        me = self.node
        if me == m.orig or me in m.path:
            return []
        if self.seen.check_and_add((m.orig, m.req_id), now):
            return []
        path = m.path + (me,)
        self.cache.learn(path, now)
        if me == m.target:
            back = tuple(reversed(path))
            reply = Packet(self.ids.next(), "DSR_RREP", me, m.orig,
                           IP_HEADER_BYTES + header_bytes(len(path)), msg=RouteReply(path),
                           route=back, cursor=1)
            return [SendControl(reply, back[1])]
        if m.ttl <= 1 or len(path) > self.params.max_route_hops:
            return []
        out = RouteRequest(m.req_id, m.orig, m.target, path, m.ttl - 1)
        pkt = Packet(packet.pid, "DSR_RREQ", m.orig, BROADCAST,
                     IP_HEADER_BYTES + header_bytes(len(path)), msg=out)
        return [SendControl(pkt, BROADCAST, self._jitter())]

    def _forward_control(self, packet: Packet) -> list:
        route = packet.route
        i = packet.cursor
        if route is None or i >= len(route) or route[i] != self.node:
            raise MalformedControl(f"node {self.node} is not hop {i} of {route}")
        if i == len(route) - 1:
            return []
        out = packet.copy()
        out.cursor = i + 1
        return [SendControl(out, route[i + 1])]

    def _on_reply(self, packet: Packet, m: RouteReply, now: int) -> list:
        if not is_simple_path(m.route) or len(m.route) < 2:
            raise MalformedControl(f"bad reply route {m.route}")
        self.cache.learn(m.route, now)
        if packet.dst != self.node:
            return self._forward_control(packet)
        target = m.route[-1]
        if target in self.discoveries:
            self.discovery_log.append((target, len(m.route) - 1, now))
        return self._release_all(now)

    def _on_error(self, packet: Packet, m: RouteError, now: int) -> list:
        self.cache.remove_link(*m.link)
        if packet.dst == self.node:
            return []
        return self._forward_control(packet)

    # -- data ----------------------------------------------------------------

    def handle_data(self, packet: Packet, prev: int, now: int) -> list:
        route = packet.route
        i = packet.cursor
        if route is None or i >= len(route) or route[i] != self.node:
            raise MalformedControl(f"data for {packet.dst} reached {self.node} off its source route")
        if packet.dst == self.node:
            return [DeliverUp(packet)]
        packet.cursor = i + 1
        if not is_simple_path(route):
            raise AssertionError(f"DSR source route {route} has a cycle")
        return [ForwardData(packet, route[i + 1])]

    def handle_overheard(self, packet: Packet, now: int) -> list:
        if self.params.promiscuous and packet.route:
            self.cache.learn(packet.route, now)
        return []

    def handle_link_failure(self, next_hop: int, packet: Packet | None, now: int) -> list:
        me = self.node
        self.cache.remove_link(me, next_hop)
        if packet is None or not packet.is_data:
            return []
        actions = []
        route = packet.route
        i = route.index(me) if route and me in route else 0
        if packet.src != me and i > 0:
            back = tuple(reversed(route[: i + 1]))
            err = Packet(self.ids.next(), "DSR_RERR", me, packet.src,
                         IP_HEADER_BYTES + header_bytes(len(back) + 2),
                         msg=RouteError((me, next_hop), packet.src), route=back, cursor=1)
            actions.append(SendControl(err, back[1]))
        if packet.salvage >= self.params.salvage_limit:
            actions.append(DropData(packet, RET))
            return actions
        alt = self.cache.lookup(packet.dst)
        packet.salvage += 1
        if alt is not None:
            actions.append(self._attach(packet, alt))
        elif packet.src == me:
            actions.extend(self._buffer_and_discover(packet, now))
        else:
            packet.salvage -= 1
            actions.append(DropData(packet, RET))
        return actions
