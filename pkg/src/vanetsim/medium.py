"""Shared air: who hears whom, carrier sense, capture and collisions.

Each receiver locks onto the first in-range frame that starts while it is
neither transmitting nor already locked; every other frame overlapping the
locked one adds its full power to the lock's interference. Carrier sense and
interference bookkeeping use the transmitter's start and end instants;
propagation delay only shifts when a decoded frame is handed to the MAC.

In ideal mode a frame reaches every node within ``ideal_radius`` with no
interference, no half-duplex loss and no carrier sense between nodes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import _kernels as k
from .engine import Simulator
from .mac import BROADCAST, Frame, Mac
from .mobility import PositionField
from .radio import SPEED_OF_LIGHT, ChannelModel

COL = "COL"
SEN = "SEN"

_NS_PER_M = 1e9 / SPEED_OF_LIGHT


_NEVER = k.NEVER


class Medium:
    def __init__(
        self,
        sim: Simulator,
        field: PositionField,
        channel: ChannelModel,
        ideal: bool = False,
        ideal_radius: float = 250.0,
        promiscuous: bool = False,
    ):
        n = field.n
        self.sim = sim
        self.field = field
        self.channel = channel
        self.ideal = ideal
        self.ideal_radius = ideal_radius
        self.promiscuous = promiscuous
        self.macs: list[Mac] = []
        self.busy_count = np.zeros(n, dtype=np.int32)
        self.transmitting = np.zeros(n, dtype=bool)
        self._active_sum = np.zeros(n, dtype=np.float64)
        self._lock = np.full(n, -1, dtype=np.int64)
        self._lock_power = np.zeros(n, dtype=np.float64)
        self._lock_interf = np.zeros(n, dtype=np.float64)
        self._sens = channel.rx_sensitivity
        # squared distance beyond which nothing can be decoded (with a margin;
        # the exact test is on received power)
        r = ideal_radius if ideal else channel.range_m
        self._reach2 = (r * 1.0001 + 1e-6) ** 2
        self._capture = 10.0 ** (channel.capture_ratio_db / 10.0)
        gain = channel.tx_power * channel.antenna_gain_tx * channel.antenna_gain_rx
        lam = channel.wavelength
        h2 = (channel.antenna_height_tx * channel.antenna_height_rx) ** 2
        self._power = (gain * lam * lam, (4 * np.pi) ** 2, gain * h2, channel.system_loss,
                       channel.crossover_distance, self._sens)
        self._idx_buf = np.empty(n, dtype=np.int64)
        self._d_buf = np.empty(n, dtype=np.float64)
        self._p_buf = np.empty(n, dtype=np.float64)
        self._due_buf = np.empty(n, dtype=np.int64)
        self._next_id = 0
        self.on_loss: Callable[[int, Frame, str], None] | None = None
        # optional (frame, nodes, props, now) -> mask of broadcast receivers worth delivering to
        self.rx_filter: Callable[[Frame, np.ndarray, np.ndarray, int], np.ndarray] | None = None
        self.air_log: list[tuple[int, int, int, int]] | None = None  # (start, end, src, frame id)
        self.transmissions = 0

        # DCF contention state, one slot per node
        self.contending = np.zeros(n, dtype=bool)
        self.backoff = np.zeros(n, dtype=np.int64)
        self.idle_since = np.full(n, -1, dtype=np.int64)
        self.access_at = np.full(n, _NEVER, dtype=np.int64)
        self.idle_slots = np.zeros(n, dtype=np.int64)
        self._difs: int | None = None
        self._slot: int | None = None
        self._access_ev = None
        self._armed = _NEVER

    # -- contention ----------------------------------------------------------

    def attach_dcf(self, difs: int, slot: int) -> None:
        if self._difs is None:
            self._difs, self._slot = difs, slot
        elif (difs, slot) != (self._difs, self._slot):
            raise ValueError("all nodes of a run must share one PHY timing")

    def start_contention(self, node: int, backoff: int) -> None:
        self.contending[node] = True
        self.backoff[node] = backoff
        self.idle_since[node] = -1
        self.access_at[node] = _NEVER

    def end_contention(self, node: int) -> None:
        self.idle_slots[node] += self.backoff[node]
        self.backoff[node] = 0
        self.contending[node] = False
        self.idle_since[node] = -1
        self.access_at[node] = _NEVER

    def resume_node(self, node: int, now: int) -> None:
        self.idle_since[node] = now
        t = now + self._difs + int(self.backoff[node]) * self._slot
        self.access_at[node] = t
        if t < self._armed:
            self._arm(t)

    def freeze_nodes(self, nodes: np.ndarray, now: int, own: bool = False) -> None:
        """Medium turned busy at ``nodes``: bank the whole idle slots counted so far.

        A station whose backoff expires at this very instant has already
        committed to transmit, unless the busy medium is its own transmission.
        """
        k.freeze(np.asarray(nodes, dtype=np.int64), now, own, self.contending, self.idle_since,
                 self.access_at, self.backoff, self.idle_slots, self._difs, self._slot)

    def _arm(self, t: int) -> None:
        if self._access_ev is not None:
            self.sim.cancel(self._access_ev)
        self._armed = t
        self._access_ev = self.sim.schedule(t, self._on_access, kind="mac-access")

    def _on_access(self) -> None:
        now = self.sim.now
        self._access_ev = None
        self._armed = _NEVER
        access_at = self.access_at
        n, _ = k.due_and_next(access_at, now, self._due_buf)
        macs = self.macs
        for i in self._due_buf[:n].tolist():
            if access_at[i] == now:
                macs[i]._access()
        m = k.earliest(access_at)
        if m != _NEVER and m < self._armed:
            self._arm(m)

    # -- air -----------------------------------------------------------------

    def neighbours(self, node: int, t: int) -> np.ndarray:
        """Nodes that would hear a frame sent by ``node`` at ``t``."""
        rx, _, _ = self._reach(node, t)
        return rx

    def _reach(self, src: int, t: int):
        x, y = self.field.positions(t)
        idx, dist = self._idx_buf, self._d_buf
        m = k.reach(x, y, src, self._reach2, idx, dist)
        if self.ideal:
            keep = dist[:m] <= self.ideal_radius
            return idx[:m][keep], None, dist[:m][keep]
        m = k.power_filter(idx, dist, m, *self._power, self._p_buf)
        return idx[:m].copy(), self._p_buf[:m].copy(), dist[:m].copy()

    def transmit(self, src: int, frame: Frame, airtime: int) -> None:
        now = self.sim.now
        rx, p, dist = self._reach(src, now)
        fid = self._next_id
        self._next_id += 1
        self.transmissions += 1
        if self.air_log is not None:
            self.air_log.append((now, now + airtime, src, fid))
        self.transmitting[src] = True
        if not self.ideal:
            self._lock[src] = -1  # half duplex: whatever src was receiving is lost
            k.tx_start(rx, p, fid, now, self._lock, self._lock_power, self._lock_interf,
                       self._active_sum, self.busy_count, self.transmitting, self.contending,
                       self.idle_since, self.access_at, self.backoff, self.idle_slots,
                       self._difs, self._slot)
        prop = np.rint(dist * _NS_PER_M).astype(np.int64)
        self.sim.schedule(now + airtime, self._end, src, frame, fid, rx, p, prop, target=src, kind="tx-end")

    def _end(self, src, frame, fid, rx, p, prop) -> None:
        now = self.sim.now
        self.transmitting[src] = False
        if self.ideal:
            ok_mask = None
        else:
            status = np.empty(rx.size, dtype=np.int8)
            quiet = np.empty(rx.size, dtype=bool)
            k.tx_end(rx, p, fid, self._capture, self._lock, self._lock_power, self._lock_interf,
                     self._active_sum, self.busy_count, status, quiet)
            ok_mask = status == 1
            if self.on_loss is not None and frame.dst == BROADCAST:
                for i in rx[status == 2].tolist():
                    self.on_loss(i, frame, COL)
        self.macs[src].tx_ended(frame, now)
        if not self.ideal and rx.size:
            m = k.unfreeze(rx, quiet, now, self.contending, self.idle_since, self.transmitting,
                           self.busy_count, self.backoff, self.access_at, self._difs, self._slot)
            if m < self._armed:
                self._arm(m)
        if ok_mask is None:
            ok, okprop = rx, prop
        else:
            ok, okprop = rx[ok_mask], prop[ok_mask]
        dst = frame.dst
        if dst != BROADCAST and self.on_loss is not None:
            hit = np.flatnonzero(rx == dst)
            if not hit.size:
                self.on_loss(dst, frame, SEN)
            elif ok_mask is not None and not ok_mask[hit[0]]:
                self.on_loss(dst, frame, COL)
        if not ok.size:
            return
        if dst != BROADCAST:
            # only the addressee acts on a unicast frame; others may overhear it
            if self.promiscuous:
                others = ok[ok != dst].tolist()
                if others:
                    self.sim.schedule(now, self._overhear, frame, others, target=src, kind="overhear")
            hit = np.flatnonzero(ok == dst)
            if not hit.size:
                return
            at = now + int(okprop[hit[0]])
            self.sim.schedule(at, self.macs[dst].receive, frame, at, target=dst, kind="rx")
            return
        if self.rx_filter is not None:
            keep = self.rx_filter(frame, ok, okprop, now)
            if keep is not None:
                ok, okprop = ok[keep], okprop[keep]
                if not ok.size:
                    return
        order = np.lexsort((ok, okprop))
        ok, okprop = ok[order], okprop[order]
        schedule = self.sim.schedule
        start = 0
        n = ok.size
        props = okprop.tolist()
        nodes = ok.tolist()
        while start < n:
            d = props[start]
            stop = start + 1
            while stop < n and props[stop] == d:
                stop += 1
            schedule(now + d, self._deliver, frame, nodes[start:stop], target=src, kind="rx")
            start = stop

    def _deliver(self, frame: Frame, nodes: list[int]) -> None:
        now = self.sim.now
        macs = self.macs
        for i in nodes:
            macs[i].receive(frame, now)

    def _overhear(self, frame: Frame, nodes: list[int]) -> None:
        macs = self.macs
        for i in nodes:
            macs[i].listener.on_frame_overheard(frame)
