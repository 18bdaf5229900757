import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strategies import scripts, tracks
from vanetsim.engine import NS_PER_S, RngStream, seconds
from vanetsim.mobility import (
    HighwayParams,
    InvalidParams,
    MissingInitialPosition,
    MobilityTrack,
    MoveCommand,
    ParseError,
    Position,
    PositionField,
    generate_highway,
    parse_mobility_script,
    position_at,
    serialize_mobility_script,
)


def test_parse_initial_position():
    s = parse_mobility_script("$node_(0) set X_ 150.0\n$node_(0) set Y_ 20.0\n$node_(0) set Z_ 0.0\n")
    assert s.node_count == 1
    assert s.tracks[0].initial == Position(150.0, 20.0)


def test_parse_setdest():
    text = '$node_(0) set X_ 0\n$node_(0) set Y_ 20\n$ns_ at 2.0 "$node_(0) setdest 250.0 20.0 10.0"\n'
    s = parse_mobility_script(text)
    assert s.tracks[0].commands == [MoveCommand(seconds(2), Position(250.0, 20.0), 10.0)]


def test_unknown_statement_reports_its_line():
    text = "$node_(0) set X_ 1\n$node_(0) set Y_ 1\n$node_(0) teleport 5\n"
    with pytest.raises(ParseError) as e:
        parse_mobility_script(text)
    assert e.value.line == 3


def test_missing_initial_position():
    text = '$node_(0) set X_ 1\n$node_(0) set Y_ 1\n$ns_ at 1.0 "$node_(1) setdest 5 5 1"\n'
    with pytest.raises(MissingInitialPosition) as e:
        parse_mobility_script(text)
    assert e.value.node == 1


@pytest.mark.parametrize("line", [
    '$ns_ at 1.0 "$node_(0) setdest 5 5 0"',
    '$ns_ at 1.0 "$node_(0) setdest 5 5 -3"',
    '$ns_ at -1.0 "$node_(0) setdest 5 5 3"',
    '$ns_ at 1.0 "$node_(0) setdest nan 5 3"',
])
def test_bad_commands_are_parse_errors(line):
    with pytest.raises(ParseError):
        parse_mobility_script(f"$node_(0) set X_ 0\n$node_(0) set Y_ 0\n{line}\n")


def test_non_increasing_command_times_rejected():
    text = ('$node_(0) set X_ 0\n$node_(0) set Y_ 0\n$ns_ at 2.0 "$node_(0) setdest 5 5 1"\n'
            '$ns_ at 2.0 "$node_(0) setdest 9 9 1"\n')
    with pytest.raises(ParseError):
        parse_mobility_script(text)


def _line_track():
    return MobilityTrack(Position(0, 0), [MoveCommand(0, Position(100, 0), 10.0)])


def test_linear_interpolation():
    assert position_at(_line_track(), seconds(5)) == Position(50.0, 0.0)


def test_rest_after_arrival():
    assert position_at(_line_track(), seconds(12)) == Position(100.0, 0.0)


def test_new_command_preempts_motion():
    tr = MobilityTrack(Position(0, 0), [MoveCommand(0, Position(100, 0), 10.0),
                                        MoveCommand(seconds(5), Position(50, 100), 10.0)])
    assert position_at(tr, seconds(5)) == Position(50.0, 0.0)
    p = position_at(tr, seconds(7))
    assert p.x == pytest.approx(50.0)
    assert p.y == pytest.approx(20.0)
    assert position_at(tr, seconds(100)) == Position(50.0, 100.0)


def test_position_before_first_command_is_initial():
    tr = MobilityTrack(Position(3, 4), [MoveCommand(seconds(10), Position(100, 4), 1.0)])
    assert position_at(tr, seconds(9)) == Position(3.0, 4.0)


def test_setdest_to_current_position_is_immediately_arrived():
    tr = MobilityTrack(Position(7, 7), [MoveCommand(seconds(1), Position(7, 7), 5.0)])
    assert position_at(tr, seconds(2)) == Position(7.0, 7.0)
    assert tr.motion_interval() is None


def test_slow_node_travels_partially():
    tr = MobilityTrack(Position(0, 0), [MoveCommand(0, Position(100, 0), 1.0),
                                        MoveCommand(seconds(10), Position(10, 50), 1.0)])
    assert position_at(tr, seconds(10)) == Position(10.0, 0.0)


def test_highway_degenerate_speed():
    hp = HighwayParams(1000.0, 8.0, 2, (20.0, 20.0), 0.0)
    s = generate_highway(hp, RngStream.global_stream(1))
    t0, t1 = s.tracks
    assert t0.initial == Position(0.0, 0.0)
    assert t0.commands == [MoveCommand(0, Position(1000.0, 0.0), 20.0)]
    assert t1.initial == Position(1000.0, 8.0)
    assert t1.commands == [MoveCommand(0, Position(0.0, 8.0), 20.0)]


def test_highway_parity_rule():
    s = generate_highway(HighwayParams(1000.0, 5.0, 4, (20.0, 30.0), 1.0), RngStream.global_stream(3))
    for i, tr in enumerate(s.tracks):
        dest = tr.commands[0].dest
        if i % 2 == 0:
            assert (tr.initial.x, dest.x) == (0.0, 1000.0)
        else:
            assert (tr.initial.x, dest.x) == (1000.0, 0.0)


def test_full_size_highway_stays_on_the_road():
    hp = HighwayParams(8829.25, 5.0, 1218, (20.0, 30.0), 1.6)
    s = generate_highway(hp, RngStream.global_stream(2015))
    assert s.node_count == 1218
    for tr in s.tracks:
        assert 0.0 <= tr.initial.x <= 8829.25
        assert tr.initial.y in (0.0, 5.0)
        assert 20.0 <= tr.commands[0].speed <= 30.0


@pytest.mark.parametrize("kw", [
    dict(node_count=3), dict(node_count=0), dict(length=-1.0), dict(speed_range=(0.0, 5.0)),
    dict(speed_range=(30.0, 20.0)), dict(start_stagger=-1.0), dict(lane_gap=-2.0),
])
def test_highway_rejects_bad_params(kw):
    base = dict(length=1000.0, lane_gap=5.0, node_count=4, speed_range=(20.0, 30.0), start_stagger=1.0)
    base.update(kw)
    with pytest.raises(InvalidParams):
        generate_highway(HighwayParams(**base), RngStream.global_stream(1))


def test_highway_serialization_is_deterministic():
    hp = HighwayParams(2000.0, 5.0, 40, (20.0, 30.0), 1.0)
    a = serialize_mobility_script(generate_highway(hp, RngStream.global_stream(77)))
    b = serialize_mobility_script(generate_highway(hp, RngStream.global_stream(77)))
    c = serialize_mobility_script(generate_highway(hp, RngStream.global_stream(78)))
    assert a == b
    assert a != c


def _same_script(a, b):
    assert a.node_count == b.node_count
    for ta, tb in zip(a.tracks, b.tracks):
        assert ta.initial == tb.initial
        assert ta.commands == tb.commands


@settings(max_examples=60, deadline=None)
@given(scripts())
def test_round_trip(script):
    text = serialize_mobility_script(script)
    back = parse_mobility_script(text)
    _same_script(script, back)
    assert serialize_mobility_script(back) == text


@settings(max_examples=80, deadline=None)
@given(tracks(), st.integers(0, 400 * NS_PER_S), st.integers(0, 400 * NS_PER_S))
def test_speed_bound(track, t1, t2):
    t1, t2 = sorted((t1, t2))
    d = position_at(track, t1).distance(position_at(track, t2))
    bound = track.max_speed * (t2 - t1) / NS_PER_S
    assert d <= bound * (1 + 1e-9) + 1e-6


@settings(max_examples=40, deadline=None)
@given(tracks(), st.integers(0, 400 * NS_PER_S))
def test_continuity(track, t):
    # a millisecond later the node can have moved at most v_max * 1 ms
    eps = 1_000_000
    p, q = position_at(track, t), position_at(track, t + eps)
    assert p.distance(q) <= track.max_speed * 1e-3 + 1e-6


@settings(max_examples=30, deadline=None)
@given(scripts(), st.lists(st.integers(0, 400 * NS_PER_S), min_size=1, max_size=20))
def test_position_field_matches_scalar_evaluation(script, times):
    field = PositionField(script)
    for t in sorted(times):
        x, y = field.positions(t)
        for i, tr in enumerate(script.tracks):
            p = position_at(tr, t)
            assert x[i] == pytest.approx(p.x, abs=1e-6)
            assert y[i] == pytest.approx(p.y, abs=1e-6)


def test_position_field_rewinds():
    tr = _line_track()
    field = PositionField(generate_highway(HighwayParams(100.0, 1.0, 2, (10.0, 10.0), 0.0),
                                           RngStream.global_stream(1)))
    later = field.positions(seconds(8))[0].copy()
    early = field.positions(seconds(2))[0].copy()
    assert np.allclose(later, [80.0, 20.0])
    assert np.allclose(early, [20.0, 80.0])
    assert position_at(tr, seconds(2)).x == 20.0


def test_motion_interval():
    tr = MobilityTrack(Position(0, 0), [MoveCommand(seconds(4), Position(100, 0), 10.0)])
    lo, hi = tr.motion_interval()
    assert lo == 4.0
    assert math.isclose(hi, 14.0)
