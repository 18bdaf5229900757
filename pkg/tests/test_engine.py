import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vanetsim.engine import (
    RngStream,
    SchedulingInPast,
    Simulator,
    format_time,
    micros,
    parse_time,
    seconds,
)


def test_earlier_timestamp_fires_first():
    sim = Simulator()
    seen = []
    sim.schedule(seconds(5), seen.append, "A")
    sim.schedule(seconds(3), seen.append, "B")
    sim.run_until(seconds(10))
    assert seen == ["B", "A"]


def test_ties_follow_insertion_order():
    sim = Simulator()
    seen = []
    sim.schedule(seconds(5), seen.append, "A")
    sim.schedule(seconds(5), seen.append, "B")
    sim.run_until(seconds(10))
    assert seen == ["A", "B"]


def test_scheduling_in_the_past_is_rejected():
    sim = Simulator()
    sim.run_until(seconds(6))
    with pytest.raises(SchedulingInPast):
        sim.schedule(seconds(5), lambda: None)


def test_cancel_semantics():
    sim = Simulator()
    seen = []
    h = sim.schedule(seconds(1), seen.append, "x")
    assert sim.cancel(h) is True
    assert sim.cancel(h) is False
    sim.run_until(seconds(2))
    assert seen == []

    fired = sim.schedule(seconds(3), seen.append, "y")
    sim.run_until(seconds(4))
    assert seen == ["y"]
    assert sim.cancel(fired) is False


def test_run_until_is_inclusive_and_sets_clock():
    sim = Simulator()
    for s in (1, 2, 3):
        sim.schedule(seconds(s), lambda: None)
    stats = sim.run_until(seconds(2))
    assert stats.dispatched == 2
    assert sim.now == seconds(2)


def test_run_until_on_empty_queue_advances_clock():
    sim = Simulator()
    stats = sim.run_until(seconds(2000))
    assert stats.dispatched == 0
    assert sim.now == seconds(2000)


def test_events_may_schedule_at_the_current_instant():
    sim = Simulator()
    seen = []

    def first():
        seen.append("first")
        sim.schedule(sim.now, seen.append, "same-instant")

    sim.schedule(seconds(1), first)
    sim.schedule(seconds(1), seen.append, "second")
    sim.run_until(seconds(1))
    assert seen == ["first", "second", "same-instant"]


def test_time_conversions_are_exact():
    assert seconds(0.1) == 100_000_000
    assert seconds("1.6e-6") == 1600
    assert micros(1.6) == 1600
    assert micros("0.8") == 800
    assert format_time(1_000_000_001) == "1.000000001"
    assert parse_time("19.875000000") == seconds("19.875")
    with pytest.raises(ValueError):
        micros("0.0001")


@given(st.integers(min_value=0, max_value=10**15))
def test_format_parse_round_trip(ns):
    text = format_time(ns)
    assert len(text.split(".")[1]) == 9
    assert parse_time(text) == ns


@settings(max_examples=50)
@given(st.lists(st.integers(min_value=0, max_value=1000), min_size=1, max_size=300))
def test_dispatch_log_is_sorted_and_clock_monotone(times):
    sim = Simulator(record=True)
    clocks = []

    def cb(t):
        assert sim.now == t
        clocks.append(sim.now)

    for t in times:
        sim.schedule(t, cb, t)
    sim.run_until(1000)
    keys = [(t, seq) for t, seq, _, _ in sim.log]
    assert keys == sorted(keys)
    assert clocks == sorted(clocks)
    assert len(clocks) == len(times)


def test_large_random_schedule_dispatches_in_key_order():
    rng = RngStream(7, (42,))
    sim = Simulator(record=True)
    for _ in range(20_000):
        sim.schedule(rng.integer(0, 5000), lambda: None)
    sim.run_until(5000)
    keys = [(t, seq) for t, seq, _, _ in sim.log]
    assert len(keys) == 20_000
    assert keys == sorted(keys)


def _chain_log(seed):
    rng = RngStream(seed, (5,))
    sim = Simulator(record=True)

    def hop(n):
        if n:
            sim.schedule(sim.now + rng.integer(0, 100), hop, n - 1, kind="hop", target=n)

    for i in range(10):
        sim.schedule(rng.integer(0, 50), hop, 20, target=i)
    sim.run_until(10_000)
    return sim.log


def test_identical_seeds_give_identical_dispatch_logs():
    assert _chain_log(3) == _chain_log(3)
    assert _chain_log(3) != _chain_log(4)


class TestRngStream:
    def test_fixed_seed_fixed_sequence(self):
        a = RngStream.for_node(11, 2)
        b = RngStream.for_node(11, 2)
        assert [a.integer(0, 15) for _ in range(50)] == [b.integer(0, 15) for _ in range(50)]

    def test_streams_are_independent_of_node_count(self):
        # node 5's draws do not depend on how many other nodes exist
        first = RngStream.for_node(9, 5)
        draws = [first.next_u64() for _ in range(5)]
        for other in range(5):
            RngStream.for_node(9, other).next_u64()
        again = RngStream.for_node(9, 5)
        assert [again.next_u64() for _ in range(5)] == draws

    def test_distinct_keys_differ(self):
        assert RngStream(1, (1, 0)).next_u64() != RngStream(1, (1, 1)).next_u64()
        assert RngStream.global_stream(1).next_u64() != RngStream.for_node(1, 0).next_u64()

    def test_integer_bounds_and_coverage(self):
        rng = RngStream(123)
        vals = [rng.integer(3, 9) for _ in range(5000)]
        assert set(vals) == set(range(3, 10))
        assert rng.integer(4, 4) == 4
        with pytest.raises(ValueError):
            rng.integer(5, 4)

    def test_uniform_range(self):
        rng = RngStream(5)
        vals = [rng.uniform(20.0, 30.0) for _ in range(2000)]
        assert all(20.0 <= v < 30.0 for v in vals)
        assert max(vals) - min(vals) > 9.0

    def test_seed_validation(self):
        with pytest.raises(ValueError):
            RngStream(-1)
        with pytest.raises(ValueError):
            RngStream(2**64)
