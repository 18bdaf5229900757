"""AODV: expanding-ring route discovery, sequence numbers, RERR propagation.

Hello messages, local repair, gratuitous RREPs and multicast are not
modelled; link breaks are learnt from MAC retry exhaustion only.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


from ..engine import seconds
from .common import (
    BROADCAST,
    IP_HEADER_BYTES,
    NRTE,
    RET,
    TTL,
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

RREQ_BYTES = 24
RREP_BYTES = 20


def rerr_bytes(n: int) -> int:
    return 12 + 8 * n


@dataclass(frozen=True)
class AodvParams:
    active_route_timeout: int = seconds(3)
    ttl_start: int = 1
    ttl_increment: int = 2
    ttl_threshold: int = 7
    net_diameter: int = 35
    rreq_retries: int = 3
    node_traversal_time: int = seconds("0.04")
    timeout_buffer: int = 2
    jitter: bool = True
    jitter_max: int = seconds("0.01")
    salvage_limit: int = 1
    buffer_capacity: int = 64
    data_ttl: int = 32

    @property
    def net_traversal_time(self) -> int:
        return 2 * self.node_traversal_time * self.net_diameter

    @property
    def path_discovery_time(self) -> int:
        return 2 * self.net_traversal_time

    @property
    def my_route_timeout(self) -> int:
        return 2 * self.active_route_timeout

    def ttl_schedule(self) -> list[int]:
        """TTL of each successive RREQ of one discovery."""
        ring = list(range(self.ttl_start, self.ttl_threshold + 1, self.ttl_increment))
        return ring + [self.net_diameter] * self.rreq_retries


VALID, INVALID = "Valid", "Invalid"


@dataclass(slots=True)
class AodvRouteEntry:
    dest: int
    next_hop: int
    hop_count: int
    dest_seq: int
    valid_seq: bool
    lifetime: int
    state: str = VALID
    precursors: set = field(default_factory=set)


@dataclass(frozen=True, slots=True)
class Rreq:
    rreq_id: int
    orig: int
    orig_seq: int
    dest: int
    dest_seq: int
    dest_seq_known: bool
    hop_count: int
    ttl: int


@dataclass(frozen=True, slots=True)
class Rrep:
    orig: int
    dest: int
    dest_seq: int
    hop_count: int
    lifetime: int


@dataclass(frozen=True, slots=True)
class Rerr:
    unreachable: tuple[tuple[int, int], ...]


class _Discovery:
    __slots__ = ("attempt", "gen", "started")

    def __init__(self, gen: int, started: int):
        self.attempt = 0
        self.gen = gen
        self.started = started


class Aodv(RoutingProtocol):
    kind = RoutingProtocolKind.Aodv

    def __init__(self, node: int, params: AodvParams | None = None, rng=None, ids: ControlIds | None = None,
                 seen=None):
        super().__init__(node, rng, ids)
        self.params = params or AodvParams()
        self.seq = 0
        self.rreq_id = 0
        self.table: dict[int, AodvRouteEntry] = {}
        self.seen = seen if seen is not None else SeenCache(self.params.path_discovery_time)
        self.discoveries: dict[int, _Discovery] = {}
        self.buffer: dict[int, deque[Packet]] = {}
        self._schedule = self.params.ttl_schedule()
        self._gen = 0

    # -- table ---------------------------------------------------------------

    def route_lookup(self, dest: int, now: int) -> AodvRouteEntry | None:
        e = self.table.get(dest)
        if e is None or e.state != VALID:
            return None
        if e.lifetime <= now:
            e.state = INVALID
            return None
        return e

    def _offer_route(self, dest, next_hop, hops, seq, lifetime, now) -> bool:
        """Install a route learnt with a known sequence number if it is better."""
        e = self.table.get(dest)
        if e is None:
            self.table[dest] = AodvRouteEntry(dest, next_hop, hops, seq, True, lifetime)
            return True
        usable = e.state == VALID and e.lifetime > now
        if usable:
            better = not e.valid_seq or seq > e.dest_seq or (seq == e.dest_seq and hops < e.hop_count)
        else:
            better = not e.valid_seq or seq >= e.dest_seq
        if better:
            e.next_hop, e.hop_count, e.dest_seq, e.valid_seq = next_hop, hops, seq, True
            e.lifetime = max(e.lifetime, lifetime) if usable else lifetime
            e.state = VALID
            return True
        if usable and seq == e.dest_seq and hops == e.hop_count and next_hop == e.next_hop:
            e.lifetime = max(e.lifetime, lifetime)
            return True
        return False

    def _touch_neighbour(self, nb: int, now: int) -> None:
        lifetime = now + self.params.active_route_timeout
        e = self.table.get(nb)
        if e is None:
            self.table[nb] = AodvRouteEntry(nb, nb, 1, 0, False, lifetime)
        elif e.state == VALID and e.lifetime > now and e.next_hop == nb and e.hop_count == 1:
            e.lifetime = max(e.lifetime, lifetime)
        elif e.state != VALID or e.lifetime <= now or e.hop_count > 1:
            e.next_hop, e.hop_count, e.state = nb, 1, VALID
            e.lifetime = lifetime

    def _refresh(self, dest: int, now: int) -> None:
        e = self.table.get(dest)
        if e is not None and e.state == VALID:
            e.lifetime = max(e.lifetime, now + self.params.active_route_timeout)

    def _control(self, ptype: str, msg, dst: int, size: int) -> Packet:
        return Packet(self.ids.next(), ptype, self.node, dst, size + IP_HEADER_BYTES, msg=msg)

    def _jitter(self) -> int:
        p = self.params
        if not p.jitter or self.rng is None:
            return 0
        return self.rng.integer(0, p.jitter_max)

    # -- discovery -----------------------------------------------------------

    def originate(self, packet: Packet, now: int) -> list:
        r = self.route_lookup(packet.dst, now)
        if r is not None:
            self._refresh(packet.dst, now)
            self._refresh(r.next_hop, now)
            return [ForwardData(packet, r.next_hop)]
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
            self.discoveries[packet.dst] = _Discovery(self._gen, now)
            actions.extend(self._send_rreq(packet.dst, now))
        return actions

    def _send_rreq(self, dest: int, now: int) -> list:
        d = self.discoveries[dest]
        p = self.params
        ttl = self._schedule[d.attempt]
        self.seq += 1
        self.rreq_id += 1
        known = self.table.get(dest)
        msg = Rreq(
            rreq_id=self.rreq_id,
            orig=self.node,
            orig_seq=self.seq,
            dest=dest,
            dest_seq=known.dest_seq if known is not None and known.valid_seq else 0,
            dest_seq_known=known is not None and known.valid_seq,
            hop_count=0,
            ttl=ttl,
        )
        self.seen.check_and_add((self.node, self.rreq_id), now)
        if ttl < p.net_diameter:
            wait = 2 * p.node_traversal_time * (ttl + p.timeout_buffer)
        else:
            full_attempts = d.attempt - (len(self._schedule) - p.rreq_retries)
            wait = p.net_traversal_time * (2 ** max(full_attempts, 0))
        return [
            SendControl(self._control("AODV_RREQ", msg, BROADCAST, RREQ_BYTES), BROADCAST),
            SetTimer(("rreq", dest, d.gen), now + wait),
        ]

    def on_timer(self, key, now: int) -> list:
        tag, dest, gen = key
        d = self.discoveries.get(dest)
        if tag != "rreq" or d is None or d.gen != gen:
            return []
        if self.route_lookup(dest, now) is not None:
            del self.discoveries[dest]
            return self._release(dest, now)
        d.attempt += 1
        if d.attempt >= len(self._schedule):
            del self.discoveries[dest]
            return [DropData(pkt, NRTE) for pkt in self.buffer.pop(dest, ())]
        return self._send_rreq(dest, now)

    def _release(self, dest: int, now: int) -> list:
        q = self.buffer.pop(dest, None)
        if not q:
            return []
        r = self.route_lookup(dest, now)
        if r is None:
            self.buffer[dest] = q
            return []
        self._refresh(dest, now)
        return [ForwardData(pkt, r.next_hop) for pkt in q]

    def pending_packets(self) -> list[Packet]:
        return [p for q in self.buffer.values() for p in q]

    # -- control -------------------------------------------------------------

    def handle_control(self, packet: Packet, prev: int, now: int) -> list:
        msg = packet.msg
        if isinstance(msg, Rreq) and self.seen.check_and_add((msg.orig, msg.rreq_id), now):
            return []  # duplicates leave no trace, not even on the previous hop's entry
        self._touch_neighbour(prev, now)
        if isinstance(msg, Rreq):
            return self._on_rreq(packet, msg, prev, now)
        if isinstance(msg, Rrep):
            return self._on_rrep(packet, msg, prev, now)
        if isinstance(msg, Rerr):
            return self._on_rerr(msg, prev, now)
        raise MalformedControl(f"AODV node {self.node} got {msg!r}")

    def _on_rreq(self, packet: Packet, m: Rreq, prev: int, now: int) -> list:
        if m.hop_count < 0 or m.ttl < 0:
            raise MalformedControl(f"negative hop count or ttl in {m!r}")
        p = self.params
        hops = m.hop_count + 1
        reverse_life = now + 2 * p.net_traversal_time - 2 * hops * p.node_traversal_time
        self._offer_route(m.orig, prev, hops, m.orig_seq, reverse_life, now)
        if m.dest == self.node:
            # always move past the requested number so stale invalid entries
            # upstream accept the reply
            self.seq = max(self.seq + 1, m.dest_seq)
            rrep = Rrep(m.orig, self.node, self.seq, 0, p.my_route_timeout)
            return [SendControl(self._control("AODV_RREP", rrep, m.orig, RREP_BYTES), prev)]
        fwd = self.route_lookup(m.dest, now)
        if fwd is not None and fwd.valid_seq and (not m.dest_seq_known or fwd.dest_seq >= m.dest_seq):
            fwd.precursors.add(prev)
            rev = self.table[m.orig]
            rev.precursors.add(fwd.next_hop)
            rrep = Rrep(m.orig, m.dest, fwd.dest_seq, fwd.hop_count, fwd.lifetime - now)
            return [SendControl(self._control("AODV_RREP", rrep, m.orig, RREP_BYTES), prev)]
        if m.ttl <= 1:
            return []
        known = self.table.get(m.dest)
        dest_seq, dest_known = m.dest_seq, m.dest_seq_known
        if known is not None and known.valid_seq and (not dest_known or known.dest_seq > dest_seq):
            dest_seq, dest_known = known.dest_seq, True
        out = Rreq(m.rreq_id, m.orig, m.orig_seq, m.dest, dest_seq, dest_known, hops, m.ttl - 1)
        pkt = Packet(packet.pid, "AODV_RREQ", m.orig, BROADCAST, packet.size, msg=out)
        return [SendControl(pkt, BROADCAST, self._jitter())]

    def _on_rrep(self, packet: Packet, m: Rrep, prev: int, now: int) -> list:
        if m.hop_count < 0:
            raise MalformedControl(f"negative hop count in {m!r}")
        hops = m.hop_count + 1
        self._offer_route(m.dest, prev, hops, m.dest_seq, now + m.lifetime, now)
        if m.orig == self.node:
            # a stale reply (older sequence number) leaves the discovery running
            r = self.route_lookup(m.dest, now)
            if r is None or m.dest not in self.discoveries:
                return []
            del self.discoveries[m.dest]
            self.discovery_log.append((m.dest, r.hop_count, now))
            return self._release(m.dest, now)
        rev = self.route_lookup(m.orig, now)
        fwd = self.route_lookup(m.dest, now)
        if rev is None or fwd is None:
            return []
        fwd.precursors.add(rev.next_hop)
        rev.precursors.add(fwd.next_hop)
        self._refresh(m.orig, now)
        out = Rrep(m.orig, m.dest, fwd.dest_seq, fwd.hop_count, m.lifetime)
        pkt = Packet(packet.pid, "AODV_RREP", m.dest, m.orig, packet.size, msg=out)
        return [SendControl(pkt, rev.next_hop)]

    def _on_rerr(self, m: Rerr, prev: int, now: int) -> list:
        lost = []
        for dest, seq in m.unreachable:
            e = self.table.get(dest)
            if e is not None and e.state == VALID and e.next_hop == prev:
                e.state = INVALID
                e.dest_seq = max(e.dest_seq, seq)
                lost.append(e)
        return self._notify_precursors(lost)

    def _notify_precursors(self, lost: list[AodvRouteEntry]) -> list:
        targets: set[int] = set()
        for e in lost:
            targets |= e.precursors
            e.precursors = set()
        targets.discard(self.node)
        if not targets:
            return []
        msg = Rerr(tuple((e.dest, e.dest_seq) for e in lost))
        size = rerr_bytes(len(lost))
        if len(targets) == 1:
            nb = next(iter(targets))
            return [SendControl(self._control("AODV_RERR", msg, nb, size), nb)]
        return [SendControl(self._control("AODV_RERR", msg, BROADCAST, size), BROADCAST)]

    # -- data ----------------------------------------------------------------

    def handle_data(self, packet: Packet, prev: int, now: int) -> list:
        self._touch_neighbour(prev, now)
        if packet.dst == self.node:
            self._refresh(packet.src, now)
            return [DeliverUp(packet)]
        packet.ttl -= 1
        if packet.ttl <= 0:
            return [DropData(packet, TTL)]
        r = self.route_lookup(packet.dst, now)
        if r is None:
            e = self.table.get(packet.dst)
            seq = e.dest_seq + 1 if e is not None else 0
            msg = Rerr(((packet.dst, seq),))
            return [
                DropData(packet, NRTE),
                SendControl(self._control("AODV_RERR", msg, prev, rerr_bytes(1)), prev),
            ]
        r.precursors.add(prev)
        for d in (packet.dst, packet.src, r.next_hop, prev):
            self._refresh(d, now)
        return [ForwardData(packet, r.next_hop)]

    def handle_link_failure(self, next_hop: int, packet: Packet | None, now: int) -> list:
        lost = []
        for e in self.table.values():
            if e.state == VALID and e.next_hop == next_hop:
                e.state = INVALID
                e.dest_seq += 1
                lost.append(e)
        actions = self._notify_precursors(lost)
        if packet is not None and packet.is_data:
            if packet.salvage < self.params.salvage_limit:
                packet.salvage += 1
                actions.extend(self._buffer_and_discover(packet, now))
            else:
                actions.append(DropData(packet, RET))
        return actions
