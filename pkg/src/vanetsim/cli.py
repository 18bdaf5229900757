"""``vanetsim`` command line: simulate, gen-mobility, analyze, compare.

Exit codes: 0 success, 1 usage, 2 configuration error, 3 runtime failure.
Progress goes to stderr; stdout carries JSON summaries only.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .engine import RngStream
from .metrics import (
    analyze_text,
    PHYS,
    PROTOCOLS,
    OutOfOrderTrace,
    TraceFormatError,
    analyze_file,
    compare_matrix,
    label,
)
from .mobility import HighwayParams, InvalidParams, generate_highway, serialize_mobility_script
from .netsim import ConfigError, ScenarioConfig, Simulation, config_from_dict, load_config
from .radio import PhyName, builtin_profile
from .routing import RoutingProtocolKind

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _phy(text: str) -> str:
    try:
        return PhyName.parse(text).value
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _protocol(text: str) -> str:
    try:
        return RoutingProtocolKind.parse(text).value
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vanetsim", description="Packet-level VANET simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one scenario")
    s.add_argument("--config", required=True)
    s.add_argument("--protocol", type=_protocol)
    s.add_argument("--phy", type=_phy)
    s.add_argument("--seed", type=_seed)
    s.add_argument("--trace")
    s.add_argument("--report")

    g = sub.add_parser("gen-mobility", help="write a two-lane highway mobility script")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--length", type=float, required=True)
    g.add_argument("--lane-gap", type=float, default=5.0)
    g.add_argument("--speed-min", type=float, default=20.0)
    g.add_argument("--speed-max", type=float, default=30.0)
    g.add_argument("--stagger", type=float, default=1.0, help="seconds between departures")
    g.add_argument("--seed", type=_seed, default=1)
    g.add_argument("--out", required=True)

    a = sub.add_parser("analyze", help="compute metrics from a trace")
    a.add_argument("--trace", required=True)
    a.add_argument("--report")
    a.add_argument("--flows", help="comma-separated flow indices")

    c = sub.add_parser("compare", help="run the protocol x PHY matrix")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=_seed)
    c.add_argument("--out", required=True)
    c.add_argument("--jobs", type=int, default=1)
    return p


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def mobility_digest(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(serialize_mobility_script(cfg.mobility).encode()).hexdigest()


def configure(cfg: ScenarioConfig, protocol: str | None = None, phy: str | None = None,
              seed: int | None = None) -> ScenarioConfig:
    """Apply command-line overrides; the mobility realization is kept as loaded."""
    kw = {}
    if protocol is not None:
        kw["routing"] = RoutingProtocolKind.parse(protocol)
    if phy is not None:
        kw["phy"] = builtin_profile(phy)
        if cfg.channel is not None:
            kw["channel"] = replace(cfg.channel, frequency=kw["phy"].frequency_hz)
    if seed is not None:
        kw["seed"] = seed
    return cfg.with_overrides(**kw) if kw else cfg


def _load(path: str, seed: int | None) -> ScenarioConfig:
    if not Path(path).is_file():
        raise ConfigError("--config", f"no such file {path}")
    if seed is None:
        return load_config(path)
    # the seed also drives generated mobility and flow selection, so reload with it
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data["seed"] = seed
    return config_from_dict(data, Path(path).parent)


def run_one(cfg: ScenarioConfig, trace: str | None, report: str | None) -> dict:
    t0 = time.perf_counter()
    result = Simulation(cfg).run(trace)
    if trace is not None:
        rep = analyze_file(trace)
    else:
        rep = analyze_text(result.trace_text)
    if report is not None:
        Path(report).write_text(rep.to_json())
    return {
        "report": rep,
        "events": result.events,
        "trace_lines": result.trace_lines,
        "wall_s": round(time.perf_counter() - t0, 3),
    }


def cmd_simulate(args) -> int:
    cfg = configure(_load(args.config, args.seed), args.protocol, args.phy)
    for p in (args.trace, args.report):
        if p is not None and not Path(p).resolve().parent.is_dir():
            raise ConfigError("output", f"directory of {p} does not exist")
    trace = args.trace or cfg.trace_path
    out = run_one(cfg, trace, args.report)
    print(json.dumps(out["report"].to_dict()))
    return EXIT_OK


def cmd_gen_mobility(args) -> int:
    hp = HighwayParams(args.length, args.lane_gap, args.nodes, (args.speed_min, args.speed_max), args.stagger)
    try:
        hp.validate()
    except InvalidParams as e:
        raise UsageError(str(e)) from None
    script = generate_highway(hp, RngStream.global_stream(args.seed))
    Path(args.out).write_text(serialize_mobility_script(script))
    print(json.dumps({"nodes": script.node_count, "out": args.out}))
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not Path(args.trace).is_file():
        raise ConfigError("--trace", f"no such file {args.trace}")
    flows = None
    if args.flows:
        try:
            flows = [int(x) for x in args.flows.split(",")]
        except ValueError:
            raise UsageError("--flows expects comma-separated integers") from None
    rep = analyze_file(args.trace, flows)
    if args.report:
        Path(args.report).write_text(rep.to_json())
    print(json.dumps(rep.to_dict()))
    return EXIT_OK


def _compare_job(cfg: ScenarioConfig, protocol: str, phy: str, out: str) -> tuple[str, str, dict]:
    run_cfg = configure(cfg, protocol, phy)
    name = label(protocol, phy)
    res = run_one(run_cfg, str(Path(out) / f"{name}.tr"), str(Path(out) / f"{name}.json"))
    res["mobility_sha256"] = mobility_digest(run_cfg)
    return protocol, phy, res


def cmd_compare(args) -> int:
    cfg = _load(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(pr, ph) for ph in PHYS for pr in PROTOCOLS]
    t0 = time.perf_counter()
    results = {}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=min(args.jobs, 4)) as ex:
            futs = [ex.submit(_compare_job, cfg, pr, ph, str(out)) for pr, ph in jobs]
            for f in futs:
                pr, ph, res = f.result()
                results[(pr, ph)] = res
                _log(f"{label(pr, ph)}: done in {res['wall_s']} s")
    else:
        for pr, ph in jobs:
            _log(f"{label(pr, ph)}: running")
            _, _, res = _compare_job(cfg, pr, ph, str(out))
            results[(pr, ph)] = res
            _log(f"{label(pr, ph)}: done in {res['wall_s']} s")
    reports = {k: results[k]["report"] for k in jobs}
    table = compare_matrix(reports)
    ordering = table.delay_ordering()
    md = table.markdown()
    md += "\nObserved mean-delay ordering (802.11a vs 802.11p): " + \
        ", ".join(f"{pr.upper()} {ordering[pr]}" for pr in PROTOCOLS) + "\n"
    (out / "comparison.md").write_text(md)
    (out / "comparison.csv").write_text(table.csv())
    digests = {label(*k): results[k]["mobility_sha256"] for k in jobs}
    manifest = {
        "seed": cfg.seed,
        "nodes": cfg.mobility.node_count,
        "flows": len(cfg.flows),
        "sim_end_s": cfg.sim_end / 1e9,
        "mobility_sha256": digests,
        "mobility_identical": len(set(digests.values())) == 1,
        "delay_ordering": ordering,
        "runs": {label(*k): {kk: v for kk, v in results[k].items() if kk != "report"} for k in jobs},
        "wall_s": round(time.perf_counter() - t0, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(json.dumps({"out": str(out), "delay_ordering": ordering}))
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "gen-mobility": cmd_gen_mobility,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"vanetsim: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"vanetsim: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as e:
        print(f"vanetsim: config error: line {e.lineno}: {e.msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceFormatError, OutOfOrderTrace) as e:
        print(f"vanetsim: trace error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, AssertionError, ValueError) as e:
        print(f"vanetsim: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
