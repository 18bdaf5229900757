"""802.11 DCF: DIFS sensing, frozen binary-exponential backoff, ACK and retries.

No RTS/CTS, no NAV and no EDCA classes; a single best-effort queue.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Protocol

import numpy as np

from .engine import EventHandle, RngStream, Simulator
from .radio import PhyProfile, frame_airtime

if TYPE_CHECKING:
    from .medium import Medium

BROADCAST = -1

DATA = 0
ACK = 1


class Frame:
    __slots__ = ("kind", "src", "dst", "psdu_bytes", "payload", "seq", "rate", "ack_of")

    def __init__(self, kind, src, dst, psdu_bytes, payload, seq, rate, ack_of=None):
        self.kind = kind
        self.src = src
        self.dst = dst
        self.psdu_bytes = psdu_bytes
        self.payload = payload
        self.seq = seq
        self.rate = rate
        self.ack_of = ack_of

    @property
    def is_broadcast(self) -> bool:
        return self.dst == BROADCAST

    def __repr__(self) -> str:
        kind = "ACK" if self.kind == ACK else "DATA"
        return f"Frame({kind} {self.src}->{self.dst} seq={self.seq} {self.psdu_bytes}B)"


@dataclass(frozen=True)
class MacParams:
    retry_limit: int = 7
    queue_capacity: int = 50
    data_rate_mbps: float = 6.0
    basic_rate_mbps: float | None = None  # None -> lowest profile rate
    mac_header_bytes: int = 28
    ack_bytes: int = 14
    rts_cts: bool = False  # reserved, not implemented

    def __post_init__(self):
        if self.retry_limit < 0 or self.queue_capacity < 1:
            raise ValueError("retry_limit must be >= 0 and queue_capacity >= 1")
        if self.rts_cts:
            raise NotImplementedError("RTS/CTS is not modelled")


class MacListener(Protocol):
    def on_frame_received(self, frame: Frame) -> None: ...
    def on_frame_done(self, frame: Frame) -> None: ...
    def on_link_failure(self, frame: Frame) -> None: ...
    def on_queue_drop(self, frame: Frame) -> None: ...
    def on_tx_start(self, frame: Frame) -> None: ...
    def on_ack_received(self, frame: Frame) -> None: ...


def draw_backoff(cw: int, rng: RngStream) -> int:
    """Backoff slot count, uniform over ``[0, cw]``."""
    if cw < 0:
        raise ValueError("cw must be nonnegative")
    return rng.integer(0, cw) if cw else 0


def next_cw(cw: int, cw_min: int, cw_max: int) -> int:
    """Contention window after a failed attempt."""
    return max(cw_min, min(2 * (cw + 1) - 1, cw_max))


IDLE, CONTEND, TX, WAIT_ACK = range(4)


class Mac:
    """DCF state machine for one node.

    Contention state (remaining backoff, idle-since instant, access time)
    lives in the medium's per-node arrays so that busy/idle transitions can
    freeze and resume every affected station at once; see
    :meth:`Medium.freeze_nodes`. The medium calls :meth:`receive` for each
    correctly decoded frame, :meth:`tx_ended` when our own transmission
    leaves the air and :meth:`_access` when our backoff expires.
    """

    def __init__(
        self,
        node: int,
        profile: PhyProfile,
        params: MacParams,
        sim: Simulator,
        medium: "Medium",
        rng: RngStream,
        listener: MacListener,
    ):
        self.node = node
        self.profile = profile
        self.params = params
        self.sim = sim
        self.medium = medium
        self.rng = rng
        self.listener = listener

        self.basic_rate = params.basic_rate_mbps or profile.basic_rate
        frame_airtime(profile, params.data_rate_mbps, 0)  # validates the rate
        self.ack_airtime = frame_airtime(profile, self.basic_rate, params.ack_bytes)
        self.ack_timeout = profile.sifs_ns + self.ack_airtime + profile.slot_ns
        self._airtime_cache: dict[tuple[float, int], int] = {}
        medium.attach_dcf(profile.difs_ns, profile.slot_ns)

        self.queue: deque[Frame] = deque()
        self.cw = profile.cw_min
        self.retry = 0
        self.drawn_backoff: int | None = None
        self.state = IDLE
        self._ack_timer: EventHandle | None = None
        self._seq = 0
        self._last_seq: dict[int, int] = {}

        self.tx_count = 0

    # -- helpers -------------------------------------------------------------

    def airtime(self, rate: float, psdu: int) -> int:
        key = (rate, psdu)
        t = self._airtime_cache.get(key)
        if t is None:
            t = self._airtime_cache[key] = frame_airtime(self.profile, rate, psdu)
        return t

    def make_frame(self, dst: int, payload: Any, net_bytes: int) -> Frame:
        rate = self.basic_rate if dst == BROADCAST else self.params.data_rate_mbps
        return Frame(DATA, self.node, dst, net_bytes + self.params.mac_header_bytes, payload, -1, rate)

    @property
    def tx_active(self) -> bool:
        return bool(self.medium.transmitting[self.node])

    @property
    def backoff(self) -> int | None:
        return int(self.medium.backoff[self.node]) if self.state == CONTEND else None

    @property
    def idle_slots_counted(self) -> int:
        return int(self.medium.idle_slots[self.node])

    def _busy(self) -> bool:
        m = self.medium
        return bool(m.transmitting[self.node]) or m.busy_count[self.node] > 0

    # -- upper interface -----------------------------------------------------

    def enqueue(self, frame: Frame) -> bool:
        if len(self.queue) >= self.params.queue_capacity:
            self.listener.on_queue_drop(frame)
            return False
        frame.seq = self._seq
        self._seq = (self._seq + 1) & 0xFFF
        self.queue.append(frame)
        if self.state == IDLE:
            self._begin_contention()
        return True

    def remove_queued(self, predicate) -> list[Frame]:
        """Pull waiting frames (never the one in service) matching ``predicate``."""
        if not self.queue:
            return []
        head = self.queue[0] if self.state != IDLE else None
        taken, kept = [], deque()
        for f in self.queue:
            if f is not head and predicate(f):
                taken.append(f)
            else:
                kept.append(f)
        self.queue = kept
        return taken

    # -- contention ----------------------------------------------------------

    def _begin_contention(self) -> None:
        if not self.queue:
            self.state = IDLE
            return
        self.state = CONTEND
        self.drawn_backoff = draw_backoff(self.cw, self.rng)
        self.medium.start_contention(self.node, self.drawn_backoff)
        if not self._busy():
            self.medium.resume_node(self.node, self.sim.now)

    def freeze(self, now: int) -> None:
        """Stop counting down because this node itself goes on air."""
        if self.state == CONTEND:
            self.medium.freeze_nodes(np.array([self.node]), now, own=True)

    def unfreeze(self, now: int) -> None:
        if self.state == CONTEND and not self._busy():
            self.medium.resume_node(self.node, now)

    def _access(self) -> None:
        self.medium.end_contention(self.node)
        self.state = TX
        frame = self.queue[0]
        self.tx_count += 1
        self.listener.on_tx_start(frame)
        self._transmit(frame)

    def _transmit(self, frame: Frame) -> None:
        self.medium.transmit(self.node, frame, self.airtime(frame.rate, frame.psdu_bytes))

    def tx_ended(self, frame: Frame, now: int) -> None:
        if frame.kind == ACK:
            if self.state == CONTEND:
                self.unfreeze(now)
            return
        if frame.dst == BROADCAST:
            self._finish(success=True)
        else:
            self.state = WAIT_ACK
            self._ack_timer = self.sim.schedule(
                now + self.ack_timeout, self._ack_timeout, target=self.node, kind="mac-ack-timeout"
            )

    def _finish(self, success: bool) -> None:
        frame = self.queue.popleft()
        self.cw = self.profile.cw_min
        self.retry = 0
        self.state = IDLE
        if success:
            self.listener.on_frame_done(frame)
        else:
            self.listener.on_link_failure(frame)
        if self.state == IDLE:
            self._begin_contention()

    def _ack_timeout(self) -> None:
        self._ack_timer = None
        self.retry += 1
        if self.retry > self.params.retry_limit:
            self._finish(success=False)
            return
        self.cw = next_cw(self.cw, self.profile.cw_min, self.profile.cw_max)
        self._begin_contention()

    # -- reception -----------------------------------------------------------

    def receive(self, frame: Frame, now: int) -> None:
        if frame.kind == ACK:
            if (
                frame.dst == self.node
                and self.state == WAIT_ACK
                and self.queue
                and frame.seq == self.queue[0].seq
                and frame.src == self.queue[0].dst
            ):
                self.sim.cancel(self._ack_timer)
                self._ack_timer = None
                self.listener.on_ack_received(frame)
                self._finish(success=True)
            return
        if frame.dst == BROADCAST:
            self.listener.on_frame_received(frame)
            return
        if frame.dst != self.node:
            return
        self.sim.schedule(now + self.profile.sifs_ns, self._send_ack, frame, target=self.node, kind="mac-sifs")
        if self._last_seq.get(frame.src) == frame.seq:
            return
        self._last_seq[frame.src] = frame.seq
        self.listener.on_frame_received(frame)

    def _send_ack(self, data: Frame) -> None:
        if self.tx_active:
            return
        ack = Frame(ACK, self.node, data.src, self.params.ack_bytes, None, data.seq, self.basic_rate, data.payload)
        self.freeze(self.sim.now)
        self.listener.on_tx_start(ack)
        self._transmit(ack)
