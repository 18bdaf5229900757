"""Trace parsing and the five reported quantities: sent, received, PDR,
mean end-to-end delay and first reception time.

All arithmetic is exact (integer nanoseconds and Fractions); floats appear
only when a report is serialized.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping

import numpy as np

from .engine import NS_PER_S, format_time

EVENTS = frozenset("srdf")
LAYERS = frozenset({"AGT", "RTR", "MAC"})
PACKET_TYPES = frozenset({"cbr", "AODV_RREQ", "AODV_RREP", "AODV_RERR", "DSR_RREQ", "DSR_RREP",
                          "DSR_RERR", "ACK"})
REASONS = frozenset({"IFQ", "RET", "COL", "SEN", "NRTE", "TTL", "END"})
TERMINAL_REASONS = frozenset({"IFQ", "RET", "NRTE", "TTL", "END"})


class TraceFormatError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class OutOfOrderTrace(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True, slots=True)
class TraceRecord:
    ev: str
    time: int  # ns
    node: int
    layer: str
    pid: str
    ptype: str
    size: int
    src: int
    dst: int
    reason: str | None = None

    def format(self) -> str:
        line = (f"{self.ev} {format_time(self.time)} {self.node} {self.layer} {self.pid} "
                f"{self.ptype} {self.size} {self.src} {self.dst}")
        return line if self.reason is None else f"{line} {self.reason}"

    @property
    def flow(self) -> int | None:
        head, _, _ = self.pid.partition(".")
        return int(head) if head.isdigit() else None

    @property
    def is_terminal(self) -> bool:
        if self.ptype != "cbr":
            return False
        if self.ev == "r":
            return self.layer == "AGT"
        return self.ev == "d" and self.reason in TERMINAL_REASONS


_UINT = r"(?:0|[1-9][0-9]*)"
_SINT = rf"-?{_UINT}"
_FIELDS = (rf"{_UINT}\.[0-9]{{9}} {_UINT} (?:AGT|RTR|MAC) (?:[0-9]+|ctl)\.[0-9]+ "
           rf"(?:{'|'.join(sorted(PACKET_TYPES))}) {_UINT} {_SINT} {_SINT}")
_REASON = "|".join(sorted(REASONS))
# one well-formed record; the reason field appears on drop records only
_LINE = rf"(?:[srf] {_FIELDS}|d {_FIELDS} (?:{_REASON}))"
_LINE_RE = re.compile(_LINE)
# digits collapse to 0 or 1, which keeps the grammar's verdict and leaves few distinct shapes
_SHAPE = str.maketrans("23456789", "11111111")
_TIME_RE = re.compile(r"^[srdf] ([0-9]+)\.([0-9]{9}) ", re.M)
_AGT_RE = re.compile(r"^([sr]) ([0-9]+)\.([0-9]{9}) [0-9]+ AGT ([^ ]+) cbr ", re.M)


def _int_field(tok: str, name: str, lineno: int, signed: bool = False) -> int:
    body = tok[1:] if signed and tok.startswith("-") else tok
    if not body.isdigit() or (len(body) > 1 and body[0] == "0"):
        raise TraceFormatError(lineno, f"bad {name} {tok!r}")
    return int(tok)


def _time_field(tok: str, lineno: int) -> int:
    whole, dot, frac = tok.partition(".")
    if not dot or len(frac) != 9 or not whole.isdigit() or not frac.isdigit() or \
            (len(whole) > 1 and whole[0] == "0"):
        raise TraceFormatError(lineno, f"bad time {tok!r} (need seconds with nine decimals)")
    return int(whole) * NS_PER_S + int(frac)


def parse_record(line: str, lineno: int = 1) -> TraceRecord:
    line = line.rstrip("\n")
    parts = line.split(" ")
    if len(parts) not in (9, 10):
        raise TraceFormatError(lineno, f"expected 9 or 10 fields, got {len(parts)}")
    ev, t, node, layer, pid, ptype, size, src, dst = parts[:9]
    if ev not in EVENTS:
        raise TraceFormatError(lineno, f"bad event {ev!r}")
    if layer not in LAYERS:
        raise TraceFormatError(lineno, f"bad layer {layer!r}")
    if ptype not in PACKET_TYPES:
        raise TraceFormatError(lineno, f"bad packet type {ptype!r}")
    a, dot, b = pid.partition(".")
    if not dot or not b.isdigit() or not (a.isdigit() or a == "ctl"):
        raise TraceFormatError(lineno, f"bad packet id {pid!r}")
    reason = None
    if len(parts) == 10:
        reason = parts[9]
        if ev != "d" or reason not in REASONS:
            raise TraceFormatError(lineno, f"bad drop reason {reason!r}")
    elif ev == "d":
        raise TraceFormatError(lineno, "drop record without a reason")
    rec = TraceRecord(
        ev, _time_field(t, lineno), _int_field(node, "node", lineno), layer, pid, ptype,
        _int_field(size, "size", lineno), _int_field(src, "src", lineno, True),
        _int_field(dst, "dst", lineno, True), reason,
    )
    if not _LINE_RE.fullmatch(line):
        # field checks above accept some non-ASCII digits; the grammar does not
        raise TraceFormatError(lineno, "malformed record")
    return rec


def read_trace(lines: Iterable[str], check_order: bool = True) -> Iterator[TraceRecord]:
    last = -1
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        rec = parse_record(line, lineno)
        if check_order and rec.time < last:
            raise OutOfOrderTrace(lineno, f"time {format_time(rec.time)} precedes {format_time(last)}")
        last = rec.time
        yield rec


@dataclass(frozen=True)
class MetricsReport:
    packets_sent: int
    packets_received: int
    total_delay_ns: int = 0
    first_packet_ns: int | None = None

    @property
    def pdr(self) -> Fraction | None:
        """Delivery ratio in percent, exact."""
        if self.packets_sent == 0:
            return None
        return Fraction(100 * self.packets_received, self.packets_sent)

    @property
    def pdr_percent(self) -> float | None:
        p = self.pdr
        return None if p is None else float(p)

    @property
    def mean_delay(self) -> Fraction | None:
        """Mean delay in seconds, exact."""
        if self.packets_received == 0:
            return None
        return Fraction(self.total_delay_ns, self.packets_received * NS_PER_S)

    @property
    def mean_delay_s(self) -> float | None:
        d = self.mean_delay
        return None if d is None else float(d)

    @property
    def first_packet_time_s(self) -> float | None:
        return None if self.first_packet_ns is None else self.first_packet_ns / NS_PER_S

    def to_dict(self) -> dict:
        return {
            "packets_sent": self.packets_sent,
            "packets_received": self.packets_received,
            "pdr_percent": self.pdr_percent,
            "mean_delay_s": self.mean_delay_s,
            "first_packet_time_s": self.first_packet_time_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


class _Fold:
    """Running totals over the AGT data records of one trace."""

    def __init__(self, flows: Iterable[int] | None):
        self.want = None if flows is None else frozenset(flows)
        self.sent_at: dict[str, int] = {}
        self.received = 0
        self.total = 0
        self.first: int | None = None
        self.last = -1  # latest timestamp seen, for the order check

    def add(self, ev: str, t: int, pid: str, lineno: int = 0) -> None:
        if self.want is not None:
            head = pid.partition(".")[0]
            if not head.isdigit() or int(head) not in self.want:
                return
        if ev == "s":
            self.sent_at[pid] = t
        elif ev == "r":
            t0 = self.sent_at.get(pid)
            if t0 is None:
                raise OutOfOrderTrace(lineno, f"{pid} received before it was sent")
            self.received += 1
            self.total += t - t0
            if self.first is None or t < self.first:
                self.first = t

    def _add_all(self, rows) -> None:
        sent_at = self.sent_at
        for ev, w, f, pid in rows:
            t = int(w) * NS_PER_S + int(f)
            if ev == "s":
                sent_at[pid] = t
            else:
                t0 = sent_at.get(pid)
                if t0 is None:
                    raise OutOfOrderTrace(0, f"{pid} received before it was sent")
                self.received += 1
                self.total += t - t0
                if self.first is None or t < self.first:
                    self.first = t

    def add_lines(self, lines: Iterable[str], first_lineno: int) -> None:
        for lineno, line in enumerate(lines, first_lineno):
            if not line.strip():
                continue
            r = parse_record(line, lineno)
            if r.time < self.last:
                raise OutOfOrderTrace(lineno, f"time {format_time(r.time)} precedes {format_time(self.last)}")
            self.last = r.time
            if r.layer == "AGT" and r.ptype == "cbr":
                self.add(r.ev, r.time, r.pid, lineno)

    def add_block(self, text: str, first_lineno: int) -> None:
        """Fold newline-terminated ``text``, whose first line is ``first_lineno``.

        Blocks that are entirely well-formed and ordered are handled with a
        few regex scans; anything else goes through the line parser so that
        errors carry the right line number.
        """
        shapes = set(text.translate(_SHAPE).split("\n"))
        shapes.discard("")
        if all(_LINE_RE.fullmatch(x) for x in shapes):
            stamps = _TIME_RE.findall(text)
            if all(len(w) <= 9 for w, _ in stamps):
                t = np.array([w + f for w, f in stamps] or [0], dtype=np.bytes_).astype(np.int64)
                t = t[:len(stamps)]
                if t.size == 0 or (t[0] >= self.last and not (t[1:] < t[:-1]).any()):
                    try:
                        if self.want is None:
                            self._add_all(_AGT_RE.findall(text))
                        else:
                            for ev, w, f, pid in _AGT_RE.findall(text):
                                self.add(ev, int(w) * NS_PER_S + int(f), pid)
                    except OutOfOrderTrace as e:
                        pid = e.reason.split(" ")[0]
                        hit = re.search(rf"^r [^ ]+ [0-9]+ AGT {re.escape(pid)} cbr ", text, re.M)
                        raise OutOfOrderTrace(first_lineno + text.count("\n", 0, hit.start()),
                                              e.reason) from None
                    if t.size:
                        self.last = int(t[-1])
                    return
        self.add_lines(text.split("\n")[:-1], first_lineno)

    def report(self) -> MetricsReport:
        return MetricsReport(len(self.sent_at), self.received, self.total, self.first)


def compute_metrics(records: Iterable[TraceRecord], flows: Iterable[int] | None = None) -> MetricsReport:
    """Fold parsed records into a report, optionally for a subset of flows."""
    fold = _Fold(flows)
    for r in records:
        if r.layer == "AGT" and r.ptype == "cbr":
            fold.add(r.ev, r.time, r.pid)
    return fold.report()


def analyze_lines(lines: Iterable[str], flows=None) -> MetricsReport:
    fold = _Fold(flows)
    fold.add_lines(lines, 1)
    return fold.report()


def analyze_text(text: str, flows=None) -> MetricsReport:
    """Same result as :func:`analyze_lines` on ``text.splitlines()``, much faster."""
    return _analyze_blocks([text], flows)


_CHUNK = 1 << 22


def analyze_file(path, flows=None) -> MetricsReport:
    def blocks():
        with open(path, encoding="utf-8", newline="") as fh:
            while True:
                data = fh.read(_CHUNK)
                if not data:
                    return
                yield data

    return _analyze_blocks(blocks(), flows)


def _analyze_blocks(blocks: Iterable[str], flows) -> MetricsReport:
    fold = _Fold(flows)
    lineno = 1
    carry = ""
    for data in blocks:
        data = carry + data
        cut = data.rfind("\n") + 1
        carry = data[cut:]
        if cut:
            fold.add_block(data[:cut], lineno)
            lineno += data.count("\n", 0, cut)
    if carry:
        fold.add_block(carry + "\n", lineno)
    return fold.report()


# -- 2x2 comparison ---------------------------------------------------------------

PROTOCOLS = ("aodv", "dsr")
PHYS = ("80211p", "80211a")
_PROTO_LABEL = {"aodv": "AODV", "dsr": "DSR"}
_PHY_LABEL = {"80211p": "802.11p", "80211a": "802.11a"}

METRIC_ROWS = (
    ("packets_sent", "Packets sent"),
    ("packets_received", "Packets received"),
    ("pdr_percent", "Packet delivery ratio (%)"),
    ("mean_delay_s", "Mean end-to-end delay (s)"),
    ("first_packet_time_s", "First packet received at (s)"),
)


def label(protocol: str, phy: str) -> str:
    return f"{protocol}-{phy}"


@dataclass(frozen=True)
class ComparisonTable:
    reports: Mapping[tuple[str, str], MetricsReport]

    def value(self, protocol: str, phy: str, metric: str):
        return getattr(self.reports[(protocol, phy)], metric)

    def delta(self, protocol: str, metric: str):
        """802.11a minus 802.11p for one protocol; None when either side is absent."""
        a = self.value(protocol, "80211a", metric)
        p = self.value(protocol, "80211p", metric)
        if a is None or p is None:
            return None
        return a - p

    def delay_ordering(self) -> dict[str, str]:
        out = {}
        for proto in PROTOCOLS:
            p = self.reports[(proto, "80211p")].mean_delay
            a = self.reports[(proto, "80211a")].mean_delay
            if p is None or a is None:
                out[proto] = "undetermined"
            elif a > p:
                out[proto] = "80211a>80211p"
            elif a < p:
                out[proto] = "80211a<80211p"
            else:
                out[proto] = "equal"
        return out

    def markdown(self) -> str:
        cols = [(pr, ph) for ph in PHYS for pr in PROTOCOLS]
        head = ["Metric"] + [f"{_PROTO_LABEL[pr]} / {_PHY_LABEL[ph]}" for pr, ph in cols]
        head += [f"Δ {_PROTO_LABEL[pr]} (a − p)" for pr in PROTOCOLS]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for key, title in METRIC_ROWS:
            cells = [title]
            cells += [_fmt(key, self.value(pr, ph, key)) for pr, ph in cols]
            cells += [_fmt(key, self.delta(pr, key)) for pr in PROTOCOLS]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "metric", "value"])
        for ph in PHYS:
            for pr in PROTOCOLS:
                for key, _ in METRIC_ROWS:
                    v = self.value(pr, ph, key)
                    w.writerow([label(pr, ph), key, "" if v is None else _csv_value(v)])
        return buf.getvalue()


def _fmt(key: str, v) -> str:
    if v is None:
        return "n/a"
    if key in ("packets_sent", "packets_received"):
        return str(v)
    if key == "pdr_percent":
        return f"{v:.5f}"
    return f"{v:.6f}"


def _csv_value(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


def compare_matrix(reports: Mapping[tuple[str, str], MetricsReport]) -> ComparisonTable:
    missing = [(pr, ph) for pr in PROTOCOLS for ph in PHYS if (pr, ph) not in reports]
    if missing:
        raise ValueError(f"missing reports for {missing}")
    return ComparisonTable(dict(reports))


def format_pdr(report: MetricsReport, decimals: int = 5) -> str:
    p = report.pdr
    return "n/a" if p is None else f"{float(p):.{decimals}f}"
