"""Command-line entry points: run, serve, analyze, bench."""

from __future__ import annotations

import argparse
import json
import sys

from . import bench as bench_mod
from .analyzers import (
    BYRD_FILTER,
    EVERYTHING_FILTER,
    AnalyzerTimings,
    MirrorState,
    Session,
    byrd_printer,
    depth_stats,
    drain,
    node_counter,
    slow_analyzer,
)
from .driver import DriverConfig, serve
from .engine import EngineError, ParseError, TraceSink, load_program, parse_term, run
from .filters import parse_filters
from .trace_model import encode_event


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tracelens", description="full-trace tracer driver toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a program locally, no server")
    p_run.add_argument("--program", required=True)
    p_run.add_argument("--goal", required=True)
    p_run.add_argument("--checkpoint-every", type=int, default=1000)
    p_run.add_argument("--trace-out", help="dump the event stream to this nd-text file")
    p_run.add_argument("--off", action="store_true", help="deactivated tracer (timing baseline)")
    p_run.set_defaults(func=cmd_run)

    p_serve = sub.add_parser("serve", help="serve a traced run to analyzers")
    p_serve.add_argument("--program", required=True)
    p_serve.add_argument("--goal", required=True)
    p_serve.add_argument("--mode", choices=("off", "full_broadcast", "driven"), default="driven")
    p_serve.add_argument("--filters", action="append", default=[], help="pre-run filter file")
    p_serve.add_argument("--listen", default="127.0.0.1:0")
    p_serve.add_argument("--checkpoint-every", type=int, default=1000)
    p_serve.add_argument("--wait-clients", type=int, default=0)
    p_serve.add_argument("--report", help="write the server-side workload report here")
    p_serve.add_argument("--scenario", default="")
    p_serve.set_defaults(func=cmd_serve)

    p_an = sub.add_parser("analyze", help="connect an analyzer to a server")
    p_an.add_argument("--connect", required=True)
    p_an.add_argument("--analyzer", choices=("byrd", "depth", "nodes", "slow", "null"), default="byrd")
    p_an.add_argument("--filters", action="append", default=[], help="filter file to subscribe")
    p_an.add_argument("--delay-us", type=int, default=1000)
    p_an.add_argument("--timings", help="write analyzer timings/results here")
    p_an.add_argument("--release", action="store_true", help="release one --wait-clients barrier slot")
    p_an.set_defaults(func=cmd_analyze)

    p_bench = sub.add_parser("bench", help="run scenario files")
    p_bench.add_argument("--scenario", required=True, help="scenario JSON file")
    p_bench.add_argument("--out", required=True, help="output directory")
    p_bench.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, EngineError, bench_mod.ScenarioError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


class _FileSink(TraceSink):
    def __init__(self, fh):
        self.fh = fh

    def on_snapshot(self, state):
        self.fh.write(json.dumps({"type": "snapshot", "chrono": state.chrono, "state": state.to_json()}) + "\n")

    def on_event(self, event):
        self.fh.write(encode_event(event).decode("utf-8"))


def cmd_run(args) -> int:
    with open(args.program, "r", encoding="utf-8") as fh:
        program = load_program(fh.read())
    goal = parse_term(args.goal)
    sink = None
    out_fh = None
    if args.trace_out:
        out_fh = open(args.trace_out, "w", encoding="utf-8")
        sink = _FileSink(out_fh)
    try:
        result = run(program, goal, sink=sink, checkpoint_every=args.checkpoint_every, trace=not args.off)
    finally:
        if out_fh:
            out_fh.close()
    print("solutions=%d events=%d final_chrono=%d search_nodes=%d" % (result.solutions, result.events, result.final_chrono, result.search_nodes))
    return 0


def cmd_serve(args) -> int:
    with open(args.program, "r", encoding="utf-8") as fh:
        program = load_program(fh.read())
    file_filters = []
    for path in args.filters:
        with open(path, "r", encoding="utf-8") as fh:
            file_filters.extend(parse_filters(fh.read()))
    config = DriverConfig(
        mode=args.mode,
        checkpoint_every=args.checkpoint_every,
        listen=args.listen,
        wait_clients=args.wait_clients,
    )

    def on_listening(host: str, port: int) -> None:
        print("LISTENING %s:%d" % (host, port), flush=True)

    report = serve(
        program,
        args.goal,
        config,
        file_filters=file_filters,
        scenario=args.scenario,
        on_listening=on_listening,
    )
    payload = report.to_json()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    print(
        "DONE events=%d delivered=%d bytes=%d solutions=%d"
        % (report.events_emitted, report.events_delivered, report.bytes_total, report.solutions),
        flush=True,
    )
    return 0


def cmd_analyze(args) -> int:
    timings = AnalyzerTimings()
    filters = []
    for path in args.filters:
        with open(path, "r", encoding="utf-8") as fh:
            filters.append(fh.read())
    if not filters:
        filters = {"byrd": [BYRD_FILTER], "depth": [BYRD_FILTER], "nodes": [EVERYTHING_FILTER], "slow": [EVERYTHING_FILTER], "null": []}[args.analyzer]

    session = Session(args.connect, analyzer_id=args.analyzer, timings=timings)
    for source in filters:
        for spec_source in _blocks(source):
            session.subscribe(spec_source)

    mirror = None
    if args.analyzer == "nodes":
        mirror = MirrorState()
        mirror.load(session.snapshot_req())
    if args.release:
        session.release()

    result: dict
    events = 0
    if args.analyzer == "byrd":
        lines = byrd_printer(session, out=sys.stdout)
        events = len(lines)
        result = {"lines": len(lines)}
    elif args.analyzer == "depth":
        stats = depth_stats(session)
        events = stats.events
        result = stats.to_json()
    elif args.analyzer == "nodes":
        counts = node_counter(session, mirror)
        events = counts.events
        result = {
            "search_nodes": counts.search_nodes,
            "proof_nodes": counts.proof_nodes,
            "gaps_seen": counts.gaps_seen,
        }
    elif args.analyzer == "slow":
        slow = slow_analyzer(session, args.delay_us / 1e6)
        events = slow.events
        result = {"events": slow.events, "total_delay_ns": slow.total_delay_ns, "delay_us": args.delay_us}
    else:
        events = drain(session)
        result = {"events": events}
    session.bye()

    if args.timings:
        with open(args.timings, "w", encoding="utf-8") as fh:
            json.dump({"analyzer": args.analyzer, "events": events, "result": result, "timings": timings.to_json()}, fh, indent=2)
    return 0


def _blocks(source: str) -> list[str]:
    from .analyzers import _split_blocks

    return _split_blocks(source)


def cmd_bench(args) -> int:
    with open(args.scenario, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    scenarios = [bench_mod.ScenarioConfig.from_json(s) for s in data.get("scenarios", [])]
    if not scenarios:
        raise bench_mod.ScenarioError("scenario file holds no scenarios")
    import os

    os.makedirs(args.out, exist_ok=True)
    reports = [bench_mod.run_scenario(cfg, args.out) for cfg in scenarios]
    table, csv_text = bench_mod.render_report(reports)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    print(table)
    return 0


if __name__ == "__main__":
    sys.exit(main())
