"""Scenario builders and trace checks shared across test modules."""

from collections import Counter

from vanetsim.metrics import read_trace


def highway_config(protocol="aodv", seed=7, nodes=50, sim_end=200, flows=5, layers=("AGT", "RTR", "MAC"),
                   phy="80211p"):
    return {
        "schema": 1,
        "seed": seed,
        "sim_end": sim_end,
        "area": [3000, 20],
        "mobility": {"type": "highway", "length": 3000, "lane_gap": 5, "node_count": nodes,
                     "speed_range": [20, 30], "start_stagger": 2},
        "phy": phy,
        "routing": protocol,
        "trace": {"layers": list(layers)},
        "flows": {"random": {"count": flows, "payload_bytes": 512, "rate_pps": 4, "start": 10,
                             "stop": sim_end - 10, "start_spread": 0.37}},
    }


def chain_config(protocol="aodv", spacing=200.0, nodes=3, **extra):
    d = {
        "schema": 1,
        "seed": 1,
        "sim_end": 5,
        "mobility": {"type": "static", "points": [[spacing * i, 0.0] for i in range(nodes)]},
        "routing": {"protocol": protocol, "aodv": {"jitter": False}, "dsr": {"jitter": False}},
        "ideal_channel": True,
        "flows": [{"src": 0, "dst": nodes - 1, "rate_pps": 1, "start": 1, "stop": 1.5}],
    }
    d.update(extra)
    return d


def conservation_violations(lines):
    """Packet ids whose terminal-record count is not exactly one, plus order violations."""
    recs = list(read_trace(lines))
    sent_at = {}
    terminal = Counter()
    late = []
    for r in recs:
        if r.layer == "AGT" and r.ev == "s" and r.ptype == "cbr":
            sent_at[r.pid] = r.time
        if r.is_terminal:
            terminal[r.pid] += 1
            if r.ev == "r" and r.time < sent_at.get(r.pid, 1 << 62):
                late.append(r.pid)
    bad = [p for p in sent_at if terminal[p] != 1]
    bad += [p for p in terminal if p not in sent_at]
    return bad + late, recs
