from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vanetsim.engine import RngStream, Simulator, seconds
from vanetsim.mac import ACK, BROADCAST, Mac, MacParams, draw_backoff, next_cw
from vanetsim.medium import Medium
from vanetsim.mobility import PositionField, static_script
from vanetsim.radio import builtin_profile, channel_for

P = builtin_profile("80211p")
C_M_PER_NS = 299_792_458.0 / 1e9


class Recorder:
    def __init__(self, node, log):
        self.node = node
        self.log = log

    def _add(self, what, frame):
        self.log.append((what, self.node, frame))

    def on_frame_received(self, frame):
        self._add("rx", frame)

    def on_frame_done(self, frame):
        self._add("done", frame)

    def on_link_failure(self, frame):
        self._add("fail", frame)

    def on_queue_drop(self, frame):
        self._add("ifq", frame)

    def on_tx_start(self, frame):
        self._add("tx", frame)

    def on_ack_received(self, frame):
        self._add("ack", frame)

    def on_frame_overheard(self, frame):
        pass


class CapturingRng:
    """Wraps an RngStream and keeps every backoff draw."""

    def __init__(self, rng):
        self.rng = rng
        self.draws = []

    def integer(self, lo, hi):
        v = self.rng.integer(lo, hi)
        self.draws.append(v)
        return v


def build(points, seed=1, profile=P, params=MacParams(), ideal=False):
    sim = Simulator()
    medium = Medium(sim, PositionField(static_script(points)), channel_for(profile), ideal=ideal)
    medium.air_log = []
    log = []
    macs = []
    for i in range(len(points)):
        rng = CapturingRng(RngStream.for_node(seed, i))
        m = Mac(i, profile, params, sim, medium, rng, Recorder(i, log))
        macs.append(m)
        medium.macs.append(m)
    return sim, medium, macs, log


def test_backoff_bounds_and_coverage():
    rng = RngStream(3, (1, 0))
    vals = [draw_backoff(15, rng) for _ in range(10_000)]
    assert set(vals) == set(range(16))


def test_backoff_zero_window():
    rng = RngStream(3)
    assert all(draw_backoff(0, rng) == 0 for _ in range(100))


def test_backoff_fixed_seed():
    a = [draw_backoff(31, RngStream.for_node(8, 1)) for _ in range(1)]
    b = [draw_backoff(31, RngStream.for_node(8, 1)) for _ in range(1)]
    assert a == b


def test_next_cw_examples():
    assert next_cw(15, 15, 1023) == 31
    assert next_cw(1023, 15, 1023) == 1023
    assert next_cw(511, 15, 1023) == 1023


@given(st.integers(0, 40), st.integers(0, 10))
def test_cw_stays_in_bounds(steps, exp):
    cw_min = 2 ** exp - 1
    cw = cw_min
    for _ in range(steps):
        cw = next_cw(cw, cw_min, 1023 if cw_min <= 1023 else cw_min)
        assert cw_min <= cw <= max(1023, cw_min)


def test_unicast_timeline_on_idle_medium():
    sim, medium, macs, log = build([(0.0, 0.0), (100.0, 0.0)])
    payload = object()
    sim.schedule(seconds(1), lambda: macs[0].enqueue(macs[0].make_frame(1, payload, 100)))
    tx_at = []
    rx_at = []
    orig_transmit = medium.transmit

    def spy(src, frame, airtime):
        tx_at.append((sim.now, src, frame.kind, airtime))
        orig_transmit(src, frame, airtime)

    medium.transmit = spy
    orig_rx = macs[1].listener.on_frame_received
    macs[1].listener.on_frame_received = lambda f: (rx_at.append(sim.now), orig_rx(f))
    sim.run_until(seconds(2))

    b = macs[0].rng.draws[0]
    start = seconds(1) + 58_000 + b * 13_000
    data_air = 32_000 + 8_000 + 8_000 * -(-(22 + 8 * 128) // 48)  # 128 B psdu at 6 Mbps
    prop = round(100.0 / C_M_PER_NS)
    assert tx_at[0] == (start, 0, 0, data_air)
    assert rx_at == [start + data_air + prop]
    ack_air = 32_000 + 8_000 + 8_000 * -(-(22 + 8 * 14) // 24)  # 14 B at 3 Mbps
    assert tx_at[1] == (start + data_air + prop + 32_000, 1, ACK, ack_air)
    kinds = [e[0] for e in log if e[1] == 0]
    assert kinds == ["tx", "ack", "done"]
    assert macs[0].cw == P.cw_min


def test_retry_exhaustion_reports_link_failure():
    sim, medium, macs, log = build([(0.0, 0.0), (5000.0, 0.0)])
    macs[0].enqueue(macs[0].make_frame(1, "x", 50))
    sim.run_until(seconds(5))
    assert macs[0].tx_count == 8  # first attempt plus seven retries
    assert [e[0] for e in log] == ["tx"] * 8 + ["fail"]
    assert macs[0].cw == P.cw_min
    # the contention window doubled on every retry
    cws = [15, 31, 63, 127, 255, 511, 1023, 1023]
    assert all(0 <= d <= cw for d, cw in zip(macs[0].rng.draws, cws))


def test_broadcast_is_sent_once():
    pts = [(0.0, 0.0), (50.0, 0.0), (100.0, 0.0), (5000.0, 0.0)]
    sim, medium, macs, log = build(pts)
    macs[0].enqueue(macs[0].make_frame(BROADCAST, "hello", 30))
    sim.run_until(seconds(1))
    assert len(medium.air_log) == 1
    assert sorted(e[1] for e in log if e[0] == "rx") == [1, 2]
    assert [e[0] for e in log if e[1] == 0] == ["tx", "done"]


def test_queue_capacity_drop():
    sim, medium, macs, log = build([(0.0, 0.0), (100.0, 0.0)], params=MacParams(queue_capacity=50))
    for k in range(51):
        macs[0].enqueue(macs[0].make_frame(1, k, 100))
    drops = [e for e in log if e[0] == "ifq"]
    assert len(drops) == 1 and drops[0][2].payload == 50
    sim.run_until(seconds(10))
    done = [e[2].payload for e in log if e[0] == "done"]
    assert done == list(range(50))  # FIFO


def test_remove_queued_keeps_frame_in_service():
    sim, medium, macs, log = build([(0.0, 0.0), (100.0, 0.0)])
    for k in range(4):
        macs[0].enqueue(macs[0].make_frame(1, k, 10))
    taken = macs[0].remove_queued(lambda f: True)
    assert [f.payload for f in taken] == [1, 2, 3]
    assert [f.payload for f in macs[0].queue] == [0]


def test_mac_params_validation():
    with pytest.raises(NotImplementedError):
        MacParams(rts_cts=True)
    with pytest.raises(ValueError):
        MacParams(queue_capacity=0)


def _busy_run(seed, n_nodes=6, frames=6, broadcast_every=3):
    rng = RngStream(seed, (77,))
    pts = [(rng.uniform(0, 300), rng.uniform(0, 60)) for _ in range(n_nodes)]
    sim, medium, macs, log = build(pts, seed=seed)
    enq = []
    for i in range(n_nodes):
        for k in range(frames):
            dst = BROADCAST if k % broadcast_every == 0 else (i + 1 + k) % n_nodes
            if dst == i:
                dst = (i + 1) % n_nodes
            t = seconds("0.001") * rng.integer(0, 20)

            def go(i=i, dst=dst, k=k):
                f = macs[i].make_frame(dst, (i, k), 200)
                enq.append(f)
                macs[i].enqueue(f)

            sim.schedule(t, go)
    sim.run_until(seconds(30))
    return pts, sim, medium, macs, log, enq


@pytest.mark.parametrize("seed", range(8))
def test_contention_invariants(seed):
    pts, sim, medium, macs, log, enq = _busy_run(seed)

    # frame conservation: every enqueued frame ends exactly once
    ends = Counter()
    for what, node, frame in log:
        if what in ("done", "fail", "ifq"):
            ends[id(frame)] += 1
    assert all(ends[id(f)] == 1 for f in enq)
    assert sum(ends.values()) == len(enq)

    # per frame: at most retry_limit + 1 transmissions
    tx = Counter(id(f) for what, _, f in log if what == "tx" and f.kind != ACK)
    assert max(tx.values()) <= MacParams().retry_limit + 1
    assert all(tx[id(f)] == 1 for f in enq if f.dst == BROADCAST)

    # backoff accounting: idle slots counted equal the backoff drawn
    for m in macs:
        assert m.state == 0
        assert medium.idle_slots[m.node] == sum(m.rng.draws)
        assert P.cw_min <= m.cw <= P.cw_max

    # carrier sense: no data/broadcast start while an in-range frame is on air,
    # except starts in the same instant
    kinds = [f.kind for what, _, f in log if what == "tx"]
    assert len(kinds) == len(medium.air_log)
    reach = channel_for(P).range_m
    xy = np.asarray(pts)
    on_air = list(zip(medium.air_log, kinds))
    for (start, end, src, _), kind in on_air:
        if kind == ACK:
            continue
        for (s2, e2, src2, _), _k in on_air:
            if src2 == src or not s2 < start < e2:
                continue
            assert np.hypot(*(xy[src] - xy[src2])) > reach * (1 + 1e-9)
