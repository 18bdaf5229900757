import io
import json
from collections import Counter

import pytest

from helpers import chain_config, conservation_violations, highway_config
from vanetsim.engine import NS_PER_S, RngStream, seconds
from vanetsim.metrics import compute_metrics, read_trace
from vanetsim.mobility import HighwayParams, generate_highway
from vanetsim.netsim import (
    ConfigError,
    FlowSpec,
    Simulation,
    cbr_send_times,
    config_from_dict,
    load_config,
    on_road_window,
    select_flow_pairs,
)
from vanetsim.radio import builtin_profile, frame_airtime


def run_dict(d, **kw):
    return Simulation(config_from_dict(d), **kw).run()


class TestCbr:
    def test_eight_pps_for_ten_seconds(self):
        t = cbr_send_times(FlowSpec(0, 1, 512, 8, seconds(10), seconds(20)))
        assert len(t) == 80
        assert t[:3] == [seconds("10"), seconds("10.125"), seconds("10.25")]
        assert t[-1] == seconds("19.875")

    def test_boundary(self):
        assert cbr_send_times(FlowSpec(0, 1, 512, 1, 0, seconds("0.5"))) == [0]

    def test_non_integer_rate_is_exact(self):
        t = cbr_send_times(FlowSpec(0, 1, 512, "3", 0, seconds(1)))
        assert t == [0, 333_333_333, 666_666_666]

    def test_simulation_sends_on_schedule(self):
        d = chain_config(nodes=2)
        d["flows"] = [{"src": 0, "dst": 1, "rate_pps": 4, "start": 1, "stop": 2}]
        res = run_dict(d)
        sends = [r.time for r in read_trace(res.trace_text.splitlines()) if r.ev == "s" and r.layer == "AGT"]
        assert sends == [seconds(1), seconds("1.25"), seconds("1.5"), seconds("1.75")]


class TestConfig:
    def test_flow_to_missing_node(self):
        d = chain_config(nodes=10)
        d["flows"] = [{"src": 0, "dst": 99, "stop": 2}]
        with pytest.raises(ConfigError) as e:
            config_from_dict(d)
        assert e.value.path == "flows[0].dst"

    @pytest.mark.parametrize("mutate,path", [
        (lambda d: d.pop("sim_end"), "sim_end"),
        (lambda d: d.update(schema=2), "schema"),
        (lambda d: d.update(bogus=1), "bogus"),
        (lambda d: d["routing"].update(protocol="olsr"), "routing.protocol"),
        (lambda d: d["routing"].update(aodv={"ttl_begin": 1}), "routing.aodv.ttl_begin"),
        (lambda d: d.update(phy="80211b"), "phy.profile"),
        (lambda d: d["flows"][0].update(stop=99), "flows[0]"),
        (lambda d: d["flows"][0].update(rate_pps=0), "flows[0].rate_pps"),
        (lambda d: d.update(trace={"layers": ["PHY"]}), "trace.layers"),
        (lambda d: d.update(mobility={"type": "warp"}), "mobility.type"),
    ])
    def test_errors_name_the_field(self, mutate, path):
        d = chain_config()
        mutate(d)
        with pytest.raises(ConfigError) as e:
            config_from_dict(d)
        assert e.value.path == path

    def test_time_fields_accept_seconds(self):
        d = chain_config()
        d["routing"]["aodv"]["active_route_timeout"] = 2.5
        cfg = config_from_dict(d)
        assert cfg.aodv.active_route_timeout == seconds("2.5")
        assert cfg.aodv.jitter is False

    def test_mobility_script_path_is_relative_to_config(self, tmp_path):
        (tmp_path / "m.tcl").write_text("$node_(0) set X_ 0\n$node_(0) set Y_ 0\n"
                                        "$node_(1) set X_ 100\n$node_(1) set Y_ 0\n")
        d = chain_config()
        d["mobility"] = {"type": "script", "path": "m.tcl"}
        d["flows"] = [{"src": 0, "dst": 1, "stop": 2}]
        (tmp_path / "c.json").write_text(json.dumps(d))
        cfg = load_config(tmp_path / "c.json")
        assert cfg.mobility.node_count == 2

    def test_bad_json_reports_line(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{\n "schema": 1,\n oops\n}')
        with pytest.raises(ConfigError) as e:
            load_config(p)
        assert "line 3" in str(e.value)

    def test_full_size_config_builds(self):
        d = {"schema": 1, "seed": 3, "sim_end": 2000, "area": [6282.22, 8829.25],
             "mobility": {"type": "highway", "length": 8829.25, "node_count": 1218,
                          "speed_range": [20, 30], "start_stagger": 1.6},
             "flows": {"random": {"count": 20, "rate_pps": 1, "start": 10, "stop": 1990}},
             "trace": {"layers": ["AGT"]}}
        cfg = config_from_dict(d)
        sim = Simulation(cfg)
        assert sim.node_count == 1218 and len(cfg.flows) == 20
        stats = sim.sim.run_until(seconds(12))
        assert stats.dispatched > 0


class TestFlowSelection:
    def test_pairs_follow_side_rule(self):
        pairs = select_flow_pairs(40, 10, RngStream(5, (3,)))
        srcs = [a for a, _ in pairs]
        assert len(set(srcs)) == 10 and all(a % 2 == 0 for a in srcs)
        for k, (a, b) in enumerate(pairs):
            assert a != b
            assert b % 2 == (1 if k % 2 == 1 else 0)

    def test_seeded(self):
        assert select_flow_pairs(40, 5, RngStream(5, (3,))) == select_flow_pairs(40, 5, RngStream(5, (3,)))

    def test_acceptance_filter_is_respected(self):
        pairs = select_flow_pairs(40, 5, RngStream(1, (3,)), accept=lambda a, b: a < 10)
        assert all(a < 10 for a, _ in pairs)
        with pytest.raises(ValueError):
            select_flow_pairs(40, 5, RngStream(1, (3,)), accept=lambda a, b: False, max_draws=50)

    def test_on_road_window(self):
        s = generate_highway(HighwayParams(1000.0, 5.0, 4, (10.0, 10.0), 10.0), RngStream(1))
        # node 0 drives 0-100 s, node 2 drives 20-120 s
        assert on_road_window(s, 0, 2, 0, seconds(500)) == (seconds(20), seconds(100))
        lo, hi = on_road_window(s, 0, 2, seconds(200), seconds(300))
        assert lo == hi

    def test_on_road_random_flows(self):
        d = highway_config(nodes=40)
        d["flows"]["random"].update(window="on_road", min_window=30)
        cfg = config_from_dict(d)
        for k, f in enumerate(cfg.flows):
            lo, hi = on_road_window(cfg.mobility, f.src, f.dst, seconds(10), seconds(190))
            assert f.start == lo + k * seconds("0.37") and f.stop == hi
            assert hi - lo > seconds(30)


class TestRuns:
    def test_two_node_trace_sequence(self):
        res = run_dict(chain_config(nodes=2))
        kinds = [(r.ev, r.layer, r.ptype) for r in read_trace(res.trace_text.splitlines())]
        assert kinds[0] == ("s", "AGT", "cbr")
        assert ("s", "RTR", "AODV_RREQ") in kinds
        assert kinds.count(("r", "AGT", "cbr")) == 1
        assert kinds[-1] == ("s", "MAC", "ACK")

    @pytest.mark.parametrize("protocol", ["aodv", "dsr"])
    def test_out_of_range_pair_ends_in_nrte(self, protocol):
        d = chain_config(protocol, spacing=1000.0, nodes=2, sim_end=60)
        res = run_dict(d)
        recs = list(read_trace(res.trace_text.splitlines()))
        assert not [r for r in recs if r.ev == "r" and r.layer == "AGT"]
        drops = [r for r in recs if r.is_terminal]
        assert [(r.ev, r.layer, r.reason) for r in drops] == [("d", "RTR", "NRTE")]

    def test_in_flight_packets_end_with_end_records(self):
        d = chain_config(nodes=2, sim_end=1.0001)
        d["flows"] = [{"src": 0, "dst": 1, "rate_pps": 1, "start": 1, "stop": 1.0001}]
        recs = list(read_trace(run_dict(d).trace_text.splitlines()))
        assert [(r.ev, r.layer, r.reason, r.time) for r in recs if r.is_terminal] == \
            [("d", "AGT", "END", seconds("1.0001"))]

    def test_layer_filter_keeps_terminal_records(self):
        d = chain_config(nodes=2, sim_end=60, trace={"layers": []})
        d["mobility"]["points"][1] = [1000.0, 0.0]
        lines = run_dict(d).trace_text.splitlines()
        assert [ln.split()[3] for ln in lines] == ["AGT", "RTR"]

    def test_simulation_runs_once(self):
        sim = Simulation(config_from_dict(chain_config()))
        sim.run()
        with pytest.raises(RuntimeError):
            sim.run()

    def test_trace_to_stream_and_path(self, tmp_path):
        cfg = config_from_dict(chain_config())
        buf = io.StringIO()
        Simulation(cfg).run(buf)
        Simulation(config_from_dict(chain_config())).run(tmp_path / "t.tr")
        assert buf.getvalue() == (tmp_path / "t.tr").read_text()

    @pytest.mark.parametrize("protocol", ["aodv", "dsr"])
    @pytest.mark.parametrize("seed", [1, 2])
    def test_conservation_and_delay_floor(self, protocol, seed):
        d = highway_config(protocol, seed=seed, nodes=30, sim_end=80, flows=4)
        res = run_dict(d)
        bad, recs = conservation_violations(res.trace_text.splitlines())
        assert bad == []
        rep = compute_metrics(recs)
        assert rep.packets_received <= rep.packets_sent
        per_flow = Counter()
        for r in recs:
            if r.layer == "AGT" and r.ptype == "cbr":
                per_flow[(r.flow, r.ev)] += 1
        for (flow, ev), n in per_flow.items():
            if ev == "r":
                assert n <= per_flow[(flow, "s")]
        # every delivery took at least one data airtime
        floor = frame_airtime(builtin_profile("80211p"), 6.0, 512 + 20 + 28)
        sent = {r.pid: r.time for r in recs if r.ev == "s" and r.layer == "AGT"}
        for r in recs:
            if r.ev == "r" and r.layer == "AGT":
                assert r.time - sent[r.pid] >= floor

    def test_determinism_and_seed_sensitivity(self):
        a = run_dict(highway_config(nodes=20, sim_end=40, flows=3)).trace_text
        b = run_dict(highway_config(nodes=20, sim_end=40, flows=3)).trace_text
        c = run_dict(highway_config(nodes=20, sim_end=40, flows=3, seed=8)).trace_text
        assert a == b
        assert a != c

    @pytest.mark.parametrize("protocol", ["aodv", "dsr"])
    def test_flood_screening_preserves_application_outcome(self, protocol):
        def terminal(layers):
            res = run_dict(highway_config(protocol, nodes=30, sim_end=80, flows=4, layers=layers))
            return [r.format() for r in read_trace(res.trace_text.splitlines())
                    if r.is_terminal or (r.layer == "AGT" and r.ev == "s")]

        assert terminal(["AGT", "RTR", "MAC"]) == terminal(["AGT"])

    def test_static_chain_is_loop_free(self):
        # next-hop pointers toward the destination never revisit a node
        d = chain_config(nodes=6, spacing=180.0, sim_end=6)
        d["flows"] = [{"src": 0, "dst": 5, "rate_pps": 2, "start": 1, "stop": 5},
                      {"src": 5, "dst": 0, "rate_pps": 2, "start": 1.3, "stop": 5}]
        sim = Simulation(config_from_dict(d))
        snapshots = []

        def snap():
            now = sim.sim.now
            for dest in (0, 5):
                for start in range(6):
                    seen, node = set(), start
                    while node != dest:
                        assert node not in seen
                        seen.add(node)
                        e = sim.nodes[node].routing.route_lookup(dest, now)
                        if e is None:
                            break
                        node = e.next_hop
            snapshots.append(now)
            if now + NS_PER_S // 20 < seconds(6):
                sim.sim.schedule(now + NS_PER_S // 20, snap)

        sim.sim.schedule(0, snap)
        res = sim.run()
        assert len(snapshots) > 100
        assert "r " in res.trace_text
