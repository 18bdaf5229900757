"""Scenario assembly: CBR sources over routing over DCF over the shared medium.

A run writes one trace record per application send, routing hand-off, MAC
transmission and reception, and per drop. Every application packet ends in
exactly one terminal record: ``r`` at the destination's AGT layer, or a
``d`` record carrying IFQ, RET, NRTE, TTL or END. Dropping one copy of a
packet while another copy is still alive (or after delivery) is silent.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, TextIO

import numpy as np

from .engine import NS_PER_S, RngStream, Simulator, format_time, seconds
from .mac import ACK, BROADCAST, DATA, Frame, Mac, MacParams
from .medium import Medium
from .mobility import (
    HighwayParams,
    InvalidParams,
    MobilityScript,
    ParseError,
    PositionField,
    generate_highway,
    parse_mobility_script,
    static_script,
)
from .radio import ChannelModel, PhyProfile, builtin_profile, channel_for
from .routing import Aodv, AodvParams, ControlIds, Dsr, DsrParams, RoutingProtocolKind, data_packet
from .routing.aodv import Rreq
from .routing.dsr import RouteRequest
from .routing.common import (
    BufferData,
    DeliverUp,
    DropData,
    FloodMemory,
    ForwardData,
    Packet,
    SendControl,
    SetTimer,
)

SCHEMA_VERSION = 1
LAYERS = ("AGT", "RTR", "MAC")
TERMINAL_REASONS = frozenset({"IFQ", "RET", "NRTE", "TTL", "END"})


class ConfigError(ValueError):
    """Invalid scenario configuration; ``path`` names the offending field."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


@dataclass(frozen=True)
class FlowSpec:
    src: int
    dst: int
    payload_bytes: int = 512
    rate_pps: float | str = 8
    start: int = 0  # ns
    stop: int = 0  # ns

    def rate(self) -> Fraction:
        return Fraction(str(self.rate_pps))


def cbr_send_times(flow: FlowSpec) -> list[int]:
    """Send instants ``start + k/rate`` (floored to the nanosecond) before ``stop``."""
    rate = flow.rate()
    if rate <= 0:
        raise ValueError("rate_pps must be positive")
    out = []
    k = 0
    while True:
        t = flow.start + math.floor(k * NS_PER_S / rate)
        if t >= flow.stop:
            return out
        out.append(t)
        k += 1


def _send_time(flow: FlowSpec, rate: Fraction, k: int) -> int:
    return flow.start + math.floor(k * NS_PER_S / rate)


def select_flow_pairs(node_count: int, count: int, rng: RngStream, opposite_every: int = 2,
                      accept: Callable[[int, int], bool] | None = None,
                      max_draws: int = 100_000) -> list[tuple[int, int]]:
    """Seeded endpoint pairs: every ``opposite_every``-th flow pairs an even
    (eastbound) source with an odd (westbound) destination, the rest pair two
    even nodes. Sources are distinct. Pairs rejected by ``accept`` are redrawn."""
    evens = list(range(0, node_count, 2))
    odds = list(range(1, node_count, 2))
    if count > len(evens) or len(evens) < 2 or not odds:
        raise ValueError(f"cannot pick {count} flows among {node_count} nodes")
    pairs = []
    used: set[int] = set()
    draws = 0
    for k in range(count):
        while True:
            draws += 1
            if draws > max_draws:
                raise ValueError(f"no acceptable endpoint pair for flow {k} after {max_draws} draws")
            src = evens[rng.integer(0, len(evens) - 1)]
            if src in used:
                continue
            if opposite_every and k % opposite_every == opposite_every - 1:
                dst = odds[rng.integer(0, len(odds) - 1)]
            else:
                dst = evens[rng.integer(0, len(evens) - 1)]
                if dst == src:
                    continue
            if accept is None or accept(src, dst):
                break
        used.add(src)
        pairs.append((src, dst))
    return pairs


def on_road_window(script: MobilityScript, src: int, dst: int, start: int, stop: int) -> tuple[int, int]:
    """Part of [start, stop) during which both endpoints are driving; may be empty."""
    lo, hi = start, stop
    for node in (src, dst):
        iv = script.tracks[node].motion_interval()
        if iv is None:
            return start, start
        lo = max(lo, math.ceil(iv[0] * NS_PER_S))
        hi = min(hi, math.floor(iv[1] * NS_PER_S))
    return lo, max(lo, hi)


@dataclass
class ScenarioConfig:
    mobility: MobilityScript
    sim_end: int
    area: tuple[float, float] = (1000.0, 1000.0)
    seed: int = 1
    phy: PhyProfile = field(default_factory=lambda: builtin_profile("80211p"))
    channel: ChannelModel | None = None
    mac: MacParams = field(default_factory=MacParams)
    routing: RoutingProtocolKind = RoutingProtocolKind.Aodv
    aodv: AodvParams = field(default_factory=AodvParams)
    dsr: DsrParams = field(default_factory=DsrParams)
    flows: list[FlowSpec] = field(default_factory=list)
    ideal_channel: bool = False
    ideal_radius: float = 250.0
    trace_path: str | None = None
    trace_layers: tuple[str, ...] = LAYERS

    def validate(self) -> None:
        if not self.sim_end > 0:
            raise ConfigError("sim_end", "must be positive")
        w, h = self.area
        if not (w > 0 and h > 0):
            raise ConfigError("area", "width and height must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        n = self.mobility.node_count
        for i, f in enumerate(self.flows):
            where = f"flows[{i}]"
            for name in ("src", "dst"):
                v = getattr(f, name)
                if not 0 <= v < n:
                    raise ConfigError(f"{where}.{name}", f"node {v} does not exist ({n} nodes)")
            if f.src == f.dst:
                raise ConfigError(where, "src and dst must differ")
            if f.payload_bytes <= 0:
                raise ConfigError(f"{where}.payload_bytes", "must be positive")
            try:
                ok = f.rate() > 0
            except (ValueError, ZeroDivisionError):
                ok = False
            if not ok:
                raise ConfigError(f"{where}.rate_pps", "must be a positive number")
            if not 0 <= f.start < f.stop <= self.sim_end:
                raise ConfigError(where, "need 0 <= start < stop <= sim_end")
        for layer in self.trace_layers:
            if layer not in LAYERS:
                raise ConfigError("trace.layers", f"unknown layer {layer!r}")
        if not self.ideal_radius > 0:
            raise ConfigError("ideal_radius", "must be positive")

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


# -- JSON loading ------------------------------------------------------------

_TIME_FIELDS = {"active_route_timeout", "node_traversal_time", "jitter_max", "request_period",
                "seen_lifetime"}


def _dataclass_from(cls, data: Any, path: str, time_fields=frozenset(), base=None):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    known = {f.name for f in fields(cls)}
    kw = {}
    for k, v in data.items():
        if k not in known:
            raise ConfigError(f"{path}.{k}", "unknown field")
        if k in time_fields:
            try:
                v = seconds(v if not isinstance(v, float) else repr(v))
            except Exception:
                raise ConfigError(f"{path}.{k}", "expected a duration in seconds") from None
        kw[k] = v
    try:
        return replace(base, **kw) if base is not None else cls(**kw)
    except (TypeError, ValueError, NotImplementedError) as e:
        raise ConfigError(path, str(e)) from None


def _time(v: Any, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise ConfigError(path, "expected seconds as a number")
    try:
        ns = seconds(v)
    except Exception:
        raise ConfigError(path, f"bad duration {v!r}") from None
    if ns < 0:
        raise ConfigError(path, "must be nonnegative")
    return ns


def _int(v: Any, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, "expected an integer")
    return v


def _mobility(d: Any, base_dir: Path, seed: int) -> MobilityScript:
    if not isinstance(d, dict) or "type" not in d:
        raise ConfigError("mobility", "expected an object with a 'type'")
    kind = d["type"]
    if kind == "script":
        path = d.get("path")
        if not isinstance(path, str):
            raise ConfigError("mobility.path", "expected a file path")
        p = Path(path)
        if not p.is_absolute():
            p = base_dir / p
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError("mobility.path", f"cannot read {p}: {e.strerror}") from None
        try:
            return parse_mobility_script(text)
        except (ParseError, ValueError) as e:
            raise ConfigError("mobility.path", str(e)) from None
    if kind == "highway":
        try:
            hp = HighwayParams(
                length=float(d["length"]),
                lane_gap=float(d.get("lane_gap", 5.0)),
                node_count=_int(d["node_count"], "mobility.node_count"),
                speed_range=tuple(float(x) for x in d.get("speed_range", (20.0, 30.0))),
                start_stagger=float(d.get("start_stagger", 1.0)),
            )
            extra = set(d) - {"type", "length", "lane_gap", "node_count", "speed_range", "start_stagger"}
            if extra:
                raise ConfigError(f"mobility.{sorted(extra)[0]}", "unknown field")
            return generate_highway(hp, RngStream.global_stream(seed))
        except KeyError as e:
            raise ConfigError(f"mobility.{e.args[0]}", "required") from None
        except (InvalidParams, TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError("mobility", str(e)) from None
    if kind == "static":
        pts = d.get("points")
        if not isinstance(pts, list) or not pts:
            raise ConfigError("mobility.points", "expected a nonempty list of [x, y]")
        try:
            return static_script((float(x), float(y)) for x, y in pts)
        except (TypeError, ValueError):
            raise ConfigError("mobility.points", "each point must be [x, y]") from None
    raise ConfigError("mobility.type", f"unknown mobility type {kind!r}")


def _flows(d: Any, script: MobilityScript, seed: int, sim_end: int) -> list[FlowSpec]:
    n = script.node_count
    if d is None:
        return []
    if isinstance(d, list):
        out = []
        for i, f in enumerate(d):
            path = f"flows[{i}]"
            if not isinstance(f, dict):
                raise ConfigError(path, "expected an object")
            extra = set(f) - {"src", "dst", "payload_bytes", "rate_pps", "start", "stop"}
            if extra:
                raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown field")
            for req in ("src", "dst"):
                if req not in f:
                    raise ConfigError(f"{path}.{req}", "required")
            out.append(FlowSpec(
                src=_int(f["src"], f"{path}.src"),
                dst=_int(f["dst"], f"{path}.dst"),
                payload_bytes=_int(f.get("payload_bytes", 512), f"{path}.payload_bytes"),
                rate_pps=f.get("rate_pps", 8),
                start=_time(f.get("start", 0), f"{path}.start"),
                stop=_time(f["stop"], f"{path}.stop") if "stop" in f else sim_end,
            ))
        return out
    if isinstance(d, dict) and "random" in d:
        r = d["random"]
        path = "flows.random"
        if not isinstance(r, dict):
            raise ConfigError(path, "expected an object")
        count = _int(r.get("count", 20), f"{path}.count")
        start = _time(r.get("start", 0), f"{path}.start")
        stop = _time(r["stop"], f"{path}.stop") if "stop" in r else sim_end
        spread = _time(r.get("start_spread", 0), f"{path}.start_spread")
        window = r.get("window", "fixed")
        if window not in ("fixed", "on_road"):
            raise ConfigError(f"{path}.window", "expected 'fixed' or 'on_road'")
        min_window = _time(r.get("min_window", 0), f"{path}.min_window")
        extra = set(r) - {"count", "payload_bytes", "rate_pps", "start", "stop", "start_spread",
                          "opposite_every", "window", "min_window"}
        if extra:
            raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown field")
        accept = None
        if window == "on_road":
            def accept(a, b):
                lo, hi = on_road_window(script, a, b, start, stop)
                return hi - lo > max(min_window, (count - 1) * spread)
        try:
            pairs = select_flow_pairs(n, count, RngStream(seed, (3,)),
                                      _int(r.get("opposite_every", 2), f"{path}.opposite_every"), accept)
        except ValueError as e:
            raise ConfigError(f"{path}.count", str(e)) from None
        payload = _int(r.get("payload_bytes", 512), f"{path}.payload_bytes")
        out = []
        for k, (a, b) in enumerate(pairs):
            lo, hi = (start, stop) if window == "fixed" else on_road_window(script, a, b, start, stop)
            out.append(FlowSpec(a, b, payload, r.get("rate_pps", 8), lo + k * spread, hi))
        return out
    raise ConfigError("flows", "expected a list of flows or {'random': {...}}")


def config_from_dict(data: Any, base_dir: str | Path = ".") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a JSON object")
    if data.get("schema") != SCHEMA_VERSION:
        raise ConfigError("schema", f"expected {SCHEMA_VERSION}, got {data.get('schema')!r}")
    allowed = {"schema", "seed", "sim_end", "area", "mobility", "phy", "channel", "mac", "routing",
               "flows", "ideal_channel", "ideal_radius", "trace"}
    for k in data:
        if k not in allowed:
            raise ConfigError(k, "unknown field")
    seed = _int(data.get("seed", 1), "seed")
    if "sim_end" not in data:
        raise ConfigError("sim_end", "required")
    sim_end = _time(data["sim_end"], "sim_end")
    if "mobility" not in data:
        raise ConfigError("mobility", "required")
    mobility = _mobility(data["mobility"], Path(base_dir), seed)

    area = data.get("area", [1000.0, 1000.0])
    if not (isinstance(area, list) and len(area) == 2 and all(isinstance(a, (int, float)) for a in area)):
        raise ConfigError("area", "expected [width, height]")

    phy_d = data.get("phy", {})
    if isinstance(phy_d, str):
        phy_d = {"profile": phy_d}
    try:
        phy = builtin_profile(phy_d.get("profile", "80211p"))
    except (ValueError, AttributeError) as e:
        raise ConfigError("phy.profile", str(e)) from None
    if phy_d.get("overrides"):
        try:
            phy = phy.with_overrides(**phy_d["overrides"])
        except (TypeError, ValueError) as e:
            raise ConfigError("phy.overrides", str(e)) from None

    channel = None
    if data.get("channel"):
        channel = _dataclass_from(ChannelModel, data["channel"], "channel")

    mac = _dataclass_from(MacParams, data.get("mac", {}), "mac")

    r = data.get("routing", "aodv")
    if isinstance(r, str):
        r = {"protocol": r}
    try:
        protocol = RoutingProtocolKind.parse(r.get("protocol", "aodv"))
    except ValueError as e:
        raise ConfigError("routing.protocol", str(e)) from None
    aodv = _dataclass_from(AodvParams, r.get("aodv", {}), "routing.aodv", _TIME_FIELDS)
    dsr = _dataclass_from(DsrParams, r.get("dsr", {}), "routing.dsr", _TIME_FIELDS)

    trace = data.get("trace", {}) or {}
    layers = tuple(trace.get("layers", LAYERS))

    cfg = ScenarioConfig(
        mobility=mobility,
        sim_end=sim_end,
        area=(float(area[0]), float(area[1])),
        seed=seed,
        phy=phy,
        channel=channel,
        mac=mac,
        routing=protocol,
        aodv=aodv,
        dsr=dsr,
        flows=_flows(data.get("flows"), mobility, seed, sim_end),
        ideal_channel=bool(data.get("ideal_channel", False)),
        ideal_radius=float(data.get("ideal_radius", 250.0)),
        trace_path=trace.get("path"),
        trace_layers=layers,
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {p}: {e.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"<json line {e.lineno}>", e.msg) from None
    return config_from_dict(data, p.parent)


# -- tracing -----------------------------------------------------------------

class Tracer:
    def __init__(self, out: TextIO | None, layers=LAYERS):
        self.out = out
        self.agt = out is not None  # application records are always kept
        self.rtr = out is not None and "RTR" in layers
        self.mac = out is not None and "MAC" in layers
        self.lines = 0

    def write(self, ev, t, node, layer, pid, ptype, size, src, dst, reason=None):
        line = f"{ev} {format_time(t)} {node} {layer} {pid} {ptype} {size} {src} {dst}"
        if reason is not None:
            line += " " + reason
        self.out.write(line + "\n")
        self.lines += 1


class _Fate:
    """Live-copy bookkeeping for one application packet."""

    __slots__ = ("live", "done", "holder", "pending")

    def __init__(self, holder: int):
        self.live = 1
        self.done = False
        self.holder = holder
        self.pending = None  # drop of an earlier copy, reported if no other copy survives


# -- per-node stack ------------------------------------------------------------

class Node:
    """Routing and MAC glue for one node; the MAC's listener."""

    def __init__(self, sim: "Simulation", index: int, routing):
        self.s = sim
        self.id = index
        self.routing = routing
        self.mac: Mac | None = None

    # routing actions

    def execute(self, actions: list) -> None:
        s = self.s
        now = s.sim.now
        for a in actions:
            if isinstance(a, ForwardData):
                self._send_data(a.packet, a.next_hop)
            elif isinstance(a, SendControl):
                if a.delay > 0:
                    s.sim.schedule(now + a.delay, self._send_control, a.packet, a.next_hop,
                                   target=self.id, kind="rtr-jitter")
                else:
                    self._send_control(a.packet, a.next_hop)
            elif isinstance(a, SetTimer):
                s.sim.schedule(a.at, self._timer, a.key, target=self.id, kind="rtr-timer")
            elif isinstance(a, DropData):
                s.drop_copy(self.id, a.packet, "RTR", a.reason)
            elif isinstance(a, DeliverUp):
                s.deliver(self.id, a.packet)
            elif isinstance(a, BufferData):
                pass
            else:
                raise TypeError(f"unknown routing action {a!r}")

    def _send_data(self, pkt: Packet, next_hop: int) -> None:
        s = self.s
        if s.tracer.rtr:
            ev = "s" if pkt.src == self.id and pkt.cursor <= 1 and pkt.salvage == 0 else "f"
            s.tracer.write(ev, s.sim.now, self.id, "RTR", pkt.pid, pkt.ptype, pkt.size, pkt.src, pkt.dst)
        self.mac.enqueue(self.mac.make_frame(next_hop, pkt, pkt.size))

    def _send_control(self, pkt: Packet, next_hop: int) -> None:
        s = self.s
        if s.tracer.rtr:
            ev = "s" if pkt.src == self.id else "f"
            s.tracer.write(ev, s.sim.now, self.id, "RTR", pkt.pid, pkt.ptype, pkt.size, pkt.src, pkt.dst)
        self.mac.enqueue(self.mac.make_frame(next_hop, pkt, pkt.size))

    def _timer(self, key) -> None:
        self.execute(self.routing.on_timer(key, self.s.sim.now))

    def originate(self, pkt: Packet) -> None:
        self.execute(self.routing.originate(pkt, self.s.sim.now))

    # MAC listener

    def on_tx_start(self, frame: Frame) -> None:
        s = self.s
        if s.tracer.mac:
            pkt = frame.ack_of if frame.kind == ACK else frame.payload
            ptype = "ACK" if frame.kind == ACK else pkt.ptype
            s.tracer.write("s", s.sim.now, self.id, "MAC", pkt.pid, ptype, frame.psdu_bytes,
                           frame.src, frame.dst)

    def on_frame_received(self, frame: Frame) -> None:
        s = self.s
        now = s.sim.now
        pkt = frame.payload
        tr = s.tracer
        if tr.mac:
            tr.write("r", now, self.id, "MAC", pkt.pid, pkt.ptype, frame.psdu_bytes, frame.src, frame.dst)
        if pkt.is_data:
            pkt = pkt.copy()
            s.gain_copy(self.id, pkt)
        if tr.rtr:
            tr.write("r", now, self.id, "RTR", pkt.pid, pkt.ptype, pkt.size, pkt.src, pkt.dst)
        if pkt.is_data:
            self.execute(self.routing.handle_data(pkt, frame.src, now))
        else:
            self.execute(self.routing.handle_control(pkt, frame.src, now))

    def on_frame_overheard(self, frame: Frame) -> None:
        if frame.kind == DATA:
            self.execute(self.routing.handle_overheard(frame.payload, self.s.sim.now))

    def on_frame_done(self, frame: Frame) -> None:
        pkt = frame.payload
        if frame.dst != BROADCAST and pkt.is_data:
            self.s.lose_copy(pkt)

    def on_ack_received(self, frame: Frame) -> None:
        pass

    def on_link_failure(self, frame: Frame) -> None:
        s = self.s
        now = s.sim.now
        hop = frame.dst
        pkt = frame.payload
        actions = self.routing.handle_link_failure(hop, pkt if pkt.is_data else None, now)
        # frames still queued for the dead neighbour go back to routing
        stranded = self.mac.remove_queued(lambda f: f.dst == hop)
        for f in stranded:
            if f.payload.is_data:
                actions.extend(self.routing.handle_link_failure(hop, f.payload, now))
        self.execute(actions)

    def on_queue_drop(self, frame: Frame) -> None:
        pkt = frame.payload
        if pkt.is_data:
            self.s.drop_copy(self.id, pkt, "MAC", "IFQ", frame.psdu_bytes)
        elif self.s.tracer.mac:
            self.s.tracer.write("d", self.s.sim.now, self.id, "MAC", pkt.pid, pkt.ptype,
                                frame.psdu_bytes, pkt.src, pkt.dst, "IFQ")


# -- simulation ------------------------------------------------------------------

@dataclass
class RunResult:
    trace_path: str | None
    trace_text: str | None
    events: int
    trace_lines: int
    transmissions: int
    discoveries: list[tuple[int, int, int, int]]  # (node, dest, hops, time)


class Simulation:
    def __init__(self, cfg: ScenarioConfig, record_events: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.sim = Simulator(record=record_events)
        self.field = PositionField(cfg.mobility)
        channel = cfg.channel or channel_for(cfg.phy)
        promiscuous = cfg.routing == RoutingProtocolKind.Dsr and cfg.dsr.promiscuous
        self.medium = Medium(self.sim, self.field, channel, cfg.ideal_channel, cfg.ideal_radius,
                             promiscuous=promiscuous)
        self.medium.on_loss = self._on_loss
        self.ids = ControlIds()
        self.tracer = Tracer(None)
        self.fates: dict[str, _Fate] = {}
        self.nodes: list[Node] = []
        n = cfg.mobility.node_count
        aodv = cfg.routing == RoutingProtocolKind.Aodv
        # Without per-reception MAC/RTR records, duplicate flood receptions are
        # screened in bulk instead of being dispatched one event each.
        self.flood_screen = "MAC" not in cfg.trace_layers and "RTR" not in cfg.trace_layers
        self.floods = None
        if self.flood_screen:
            life = cfg.aodv.path_discovery_time if aodv else cfg.dsr.seen_lifetime
            self.floods = FloodMemory(n, life)
            self.medium.rx_filter = self._screen_flood
        for i in range(n):
            rrng = RngStream(cfg.seed, (2, i))
            seen = self.floods.view(i) if self.floods is not None else None
            if aodv:
                routing = Aodv(i, cfg.aodv, rrng, self.ids, seen=seen)
            else:
                routing = Dsr(i, cfg.dsr, rrng, self.ids, seen=seen)
            node = Node(self, i, routing)
            node.mac = Mac(i, cfg.phy, cfg.mac, self.sim, self.medium, RngStream.for_node(cfg.seed, i), node)
            self.nodes.append(node)
            self.medium.macs.append(node.mac)
        self._flow_rates = [f.rate() for f in cfg.flows]
        for k, f in enumerate(cfg.flows):
            if f.start < f.stop:
                self.sim.schedule(f.start, self._cbr, k, 0, target=f.src, kind="cbr")
        self._ran = False

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    # application layer

    def _cbr(self, k: int, seq: int) -> None:
        f = self.cfg.flows[k]
        now = self.sim.now
        pkt = data_packet(k, seq, f.src, f.dst, f.payload_bytes, now, self.cfg.aodv.data_ttl)
        self.fates[pkt.pid] = _Fate(f.src)
        if self.tracer.agt:
            self.tracer.write("s", now, f.src, "AGT", pkt.pid, pkt.ptype, f.payload_bytes, f.src, f.dst)
        nxt = _send_time(f, self._flow_rates[k], seq + 1)
        if nxt < f.stop:
            self.sim.schedule(nxt, self._cbr, k, seq + 1, target=f.src, kind="cbr")
        self.nodes[f.src].originate(pkt)

    # copy accounting

    def gain_copy(self, node: int, pkt: Packet) -> None:
        fate = self.fates[pkt.pid]
        fate.live += 1
        fate.holder = node

    def lose_copy(self, pkt: Packet) -> _Fate:
        """A copy left the network without a fate of its own (handed on, or a duplicate)."""
        fate = self.fates[pkt.pid]
        fate.live -= 1
        if fate.live < 0:
            raise AssertionError(f"negative live count for {pkt.pid}")
        if fate.live == 0 and not fate.done and fate.pending is not None:
            self._terminal_drop(fate, pkt, *fate.pending)
        return fate

    def drop_copy(self, node: int, pkt: Packet, layer: str, reason: str, size: int | None = None) -> None:
        fate = self.fates[pkt.pid]
        fate.live -= 1
        if fate.live < 0:
            raise AssertionError(f"negative live count for {pkt.pid}")
        if fate.done:
            return
        size = pkt.size if size is None else size
        if fate.live == 0:
            self._terminal_drop(fate, pkt, node, layer, reason, size)
        else:
            fate.pending = (node, layer, reason, size)

    def _terminal_drop(self, fate: _Fate, pkt: Packet, node, layer, reason, size) -> None:
        fate.done = True
        # terminal records ignore the layer filter so every packet stays accounted for
        if self.tracer.out is not None:
            self.tracer.write("d", self.sim.now, node, layer, pkt.pid, pkt.ptype, size,
                              pkt.src, pkt.dst, reason)

    def deliver(self, node: int, pkt: Packet) -> None:
        fate = self.lose_copy(pkt)
        if fate.done:
            return  # duplicate of an already delivered packet
        fate.done = True
        if self.tracer.out is not None:
            self.tracer.write("r", self.sim.now, node, "AGT", pkt.pid, pkt.ptype, pkt.payload_bytes,
                              pkt.src, pkt.dst)

    def _screen_flood(self, frame: Frame, nodes: np.ndarray, props: np.ndarray, now: int):
        msg = frame.payload.msg
        if isinstance(msg, Rreq):
            key = (msg.orig, msg.rreq_id)
        elif isinstance(msg, RouteRequest):
            key = (msg.orig, msg.req_id)
        else:
            return None
        at = now + props
        dup = self.floods.seen_mask(key, nodes, at)
        if isinstance(msg, RouteRequest):
            dup |= np.isin(nodes, msg.path)
        return ~dup

    def _on_loss(self, node: int, frame: Frame, reason: str) -> None:
        tr = self.tracer
        if not tr.mac:
            return
        pkt = frame.ack_of if frame.kind == ACK else frame.payload
        ptype = "ACK" if frame.kind == ACK else pkt.ptype
        tr.write("d", self.sim.now, node, "MAC", pkt.pid, ptype, frame.psdu_bytes, frame.src, frame.dst, reason)

    # driver

    def run(self, out: TextIO | str | Path | None = None) -> RunResult:
        """Run to ``sim_end``. ``out`` is a stream, a path, or None for an in-memory trace."""
        if self._ran:
            raise RuntimeError("a Simulation runs once")
        self._ran = True
        path = None
        close = False
        buf = None
        if out is None:
            out = self.cfg.trace_path
        if out is None:
            buf = io.StringIO()
            stream = buf
        elif isinstance(out, (str, Path)):
            path = str(out)
            stream = open(out, "w", encoding="utf-8", newline="\n", buffering=1 << 20)
            close = True
        else:
            stream = out
        self.tracer = Tracer(stream, self.cfg.trace_layers)
        self.medium.on_loss = self._on_loss if self.tracer.mac else None
        try:
            stats = self.sim.run_until(self.cfg.sim_end)
            self._finish(stream)
        finally:
            if close:
                stream.close()
        disc = [(node.id, d, h, t) for node in self.nodes for (d, h, t) in node.routing.discovery_log]
        disc.sort(key=lambda r: (r[3], r[0]))
        return RunResult(
            trace_path=path,
            trace_text=buf.getvalue() if buf is not None else None,
            events=stats.dispatched,
            trace_lines=self.tracer.lines,
            transmissions=self.medium.transmissions,
            discoveries=disc,
        )

    def _finish(self, stream: TextIO) -> None:
        end = self.cfg.sim_end
        open_ = []
        for pid, fate in self.fates.items():
            if not fate.done:
                if fate.live <= 0:
                    raise AssertionError(f"packet {pid} vanished without a terminal record")
                flow, seq = pid.split(".")
                open_.append((int(flow), int(seq), pid, fate))
        open_.sort()
        tr = self.tracer
        for flow, _, pid, fate in open_:
            f = self.cfg.flows[flow]
            fate.done = True
            tr.write("d", end, fate.holder, "AGT", pid, "cbr", f.payload_bytes, f.src, f.dst, "END")


def build_scenario(cfg: ScenarioConfig, **kw) -> Simulation:
    return Simulation(cfg, **kw)


def run_scenario(cfg: ScenarioConfig, out=None) -> RunResult:
    return Simulation(cfg).run(out)
