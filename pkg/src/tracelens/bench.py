"""Scenario orchestration and workload reporting.

Scenarios launch the server and each analyzer as separate OS processes so
both sides' costs are measured under real parallelism, then aggregate the
per-process reports into one table. Counted quantities (events, bytes,
predicate evaluations) must be identical across repetitions; only durations
vary and are reported as median with inter-quartile spread.
"""

from __future__ import annotations

import csv
import io
import json
import os
import statistics
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Optional

from . import corpus
from .engine import Engine, load_program, parse_term
from .filters import MergedMatcher, parse_filters

DURATION_FIELDS = (
    "t_prog_ns",
    "t_engine_ns",
    "t_cond_ns",
    "t_extract_ns",
    "t_encode_com_ns",
    "wall_ns",
)
COUNTED_FIELDS = (
    "events_emitted",
    "events_delivered",
    "bytes_total",
    "predicate_evaluations",
    "solutions",
    "final_chrono",
)


class ScenarioError(Exception):
    pass


@dataclass
class ScenarioConfig:
    name: str
    program: dict
    mode: str = "driven"
    filters: list = field(default_factory=list)  # filter sources given to every analyzer
    analyzers: list = field(default_factory=list)  # {"kind": ..., "delay_us": ..., "filters": [...]}
    checkpoint_every: int = 1000
    repetitions: int = 1

    @classmethod
    def from_json(cls, data: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ScenarioError("unknown scenario keys: %s" % sorted(extra))
        return cls(**data)


@dataclass
class WorkloadReport:
    """One scenario's aggregated measurements."""

    scenario: str
    mode: str
    events_emitted: int = 0
    events_delivered: int = 0
    bytes_total: int = 0
    predicate_evaluations: int = 0
    solutions: int = 0
    final_chrono: int = 0
    t_prog_ns: int = 0
    t_engine_ns: int = 0
    t_cond_ns: int = 0
    t_extract_ns: int = 0
    t_encode_com_ns: int = 0
    wall_ns: int = 0
    t_core_ns: Optional[int] = None
    repetitions: int = 1
    spread: dict = field(default_factory=dict)
    per_subscription: dict = field(default_factory=dict)
    analyzers: list = field(default_factory=list)

    def to_json(self) -> dict:
        return dict(self.__dict__)


def resolve_program(spec: dict) -> corpus.CorpusProgram:
    """Turn a scenario's program object into source text and a goal."""
    if "source" in spec:
        return corpus.CorpusProgram(spec.get("name", "inline"), spec["source"], spec["goal"])
    if "path" in spec:
        with open(spec["path"], "r", encoding="utf-8") as fh:
            return corpus.CorpusProgram(spec["path"], fh.read(), spec["goal"])
    kind = spec.get("kind")
    if kind == "bench":
        return corpus.bench_program(int(spec.get("n", 12)))
    if kind == "queens":
        return corpus.queens_program(int(spec.get("n", 4)))
    if kind == "csp":
        return corpus.random_csp(
            int(spec.get("seed", 1234)),
            int(spec.get("n_vars", 4)),
            int(spec.get("dom_size", 4)),
            int(spec.get("n_constraints", 5)),
        ).program
    if kind == "logic":
        return corpus.random_logic_program(int(spec.get("seed", 7)))
    raise ScenarioError("cannot resolve program spec %r" % (spec,))


# ---------------------------------------------------------------------------
# Process orchestration
# ---------------------------------------------------------------------------


def run_scenario(config: ScenarioConfig, out_dir: Optional[str] = None) -> WorkloadReport:
    """Run one scenario (server + analyzers as OS processes), aggregated."""
    reps = []
    for rep in range(max(1, config.repetitions)):
        reps.append(_run_once(config, out_dir, rep))
    report = reps[0]
    if len(reps) > 1:
        for name in COUNTED_FIELDS:
            values = {getattr(r, name) for r in reps}
            if len(values) != 1:
                raise ScenarioError(
                    "counted field %s varied across repetitions: %s" % (name, sorted(values))
                )
        for name in DURATION_FIELDS:
            samples = sorted(getattr(r, name) for r in reps)
            setattr(report, name, int(statistics.median(samples)))
            report.spread[name] = _iqr(samples)
        report.repetitions = len(reps)
    return report


def _iqr(samples: list[int]) -> int:
    if len(samples) < 2:
        return 0
    q = statistics.quantiles(samples, n=4)
    return int(q[2] - q[0])


def _run_once(config: ScenarioConfig, out_dir: Optional[str], rep: int) -> WorkloadReport:
    prog = resolve_program(config.program)
    workdir = out_dir or tempfile.mkdtemp(prefix="tracelens-")
    os.makedirs(workdir, exist_ok=True)
    tag = "%s-rep%d" % (_slug(config.name), rep)
    prog_path = os.path.join(workdir, tag + ".pl")
    report_path = os.path.join(workdir, tag + "-server.json")
    with open(prog_path, "w", encoding="utf-8") as fh:
        fh.write(prog.source)

    wait_clients = len(config.analyzers)
    cmd = [
        sys.executable,
        "-m",
        "tracelens",
        "serve",
        "--program",
        prog_path,
        "--goal",
        prog.goal,
        "--mode",
        config.mode,
        "--listen",
        "127.0.0.1:0",
        "--checkpoint-every",
        str(config.checkpoint_every),
        "--wait-clients",
        str(wait_clients),
        "--report",
        report_path,
        "--scenario",
        config.name,
    ]
    wall0 = time.perf_counter_ns()
    server = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    endpoint = _read_endpoint(server)

    procs = []
    timing_paths = []
    for i, spec in enumerate(config.analyzers):
        tpath = os.path.join(workdir, "%s-an%d.json" % (tag, i))
        timing_paths.append(tpath)
        acmd = [
            sys.executable,
            "-m",
            "tracelens",
            "analyze",
            "--connect",
            endpoint,
            "--analyzer",
            spec.get("kind", "null"),
            "--timings",
            tpath,
            "--release",
        ]
        for source in spec.get("filters", config.filters):
            fpath = os.path.join(workdir, "%s-an%d-f%d.flt" % (tag, i, len(procs)))
            with open(fpath, "w", encoding="utf-8") as fh:
                fh.write(source)
            acmd.extend(["--filters", fpath])
        if spec.get("delay_us"):
            acmd.extend(["--delay-us", str(spec["delay_us"])])
        procs.append(subprocess.Popen(acmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True))

    failures = []
    for proc in procs:
        out, err = proc.communicate(timeout=600)
        if proc.returncode != 0:
            failures.append(err.strip() or out.strip())
    sout, serr = server.communicate(timeout=600)
    wall = time.perf_counter_ns() - wall0
    if server.returncode != 0:
        raise ScenarioError("server failed: %s" % (serr.strip() or sout.strip()))
    if failures:
        raise ScenarioError("analyzer failed: %s" % failures[0])

    with open(report_path, "r", encoding="utf-8") as fh:
        server_report = json.load(fh)
    report = WorkloadReport(
        scenario=config.name,
        mode=config.mode,
        events_emitted=server_report["events_emitted"],
        events_delivered=server_report["events_delivered"],
        bytes_total=server_report["bytes_total"],
        predicate_evaluations=server_report["predicate_evaluations"],
        solutions=server_report["solutions"],
        final_chrono=server_report["final_chrono"],
        t_prog_ns=server_report["t_prog_ns"],
        t_engine_ns=server_report["t_engine_ns"],
        t_cond_ns=server_report["t_cond_ns"],
        t_extract_ns=server_report["t_extract_ns"],
        t_encode_com_ns=server_report["t_encode_com_ns"],
        wall_ns=wall,
        per_subscription=server_report.get("per_subscription", {}),
    )
    for tpath, spec in zip(timing_paths, config.analyzers):
        with open(tpath, "r", encoding="utf-8") as fh:
            report.analyzers.append(json.load(fh))
    return report


def _read_endpoint(server: subprocess.Popen) -> str:
    line = server.stdout.readline()
    if not line.startswith("LISTENING "):
        rest = server.stdout.read() or ""
        err = server.stderr.read() if server.stderr else ""
        server.kill()
        raise ScenarioError("server did not report endpoint: %r %s" % (line + rest, err))
    return line.split(None, 1)[1].strip()


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def fill_t_core(reports: list[WorkloadReport]) -> None:
    """Derive instrumented overhead from paired deactivated-tracer rows.

    For every non-off row whose scenario shares a program with an off row
    (matched by solutions+final_chrono), t_core = t_engine - t_prog(off).
    """
    offs: dict[tuple, int] = {}
    for r in reports:
        if r.mode == "off":
            offs[(r.solutions, r.final_chrono)] = r.t_prog_ns
    for r in reports:
        if r.mode != "off":
            t_prog = offs.get((r.solutions, r.final_chrono))
            if t_prog is not None:
                r.t_prog_ns = t_prog
                r.t_core_ns = max(0, r.t_engine_ns - t_prog)


# ---------------------------------------------------------------------------
# Union vs sequential filtering
# ---------------------------------------------------------------------------


def record_events(program_source: str, goal: str, max_events: Optional[int] = None) -> list:
    """One in-process engine run, events recorded in order."""
    engine = Engine(load_program(program_source), parse_term(goal))
    events = []
    while not engine.is_terminal():
        events.append(engine.step())
        if max_events is not None and len(events) >= max_events:
            break
    return events


def compare_union_vs_sequential(program_source: str, goal: str, filter_sources: list[str]) -> dict:
    """Merged-machine matching vs one-filter-at-a-time over the same stream.

    Returns counters and wall times for both modes plus per-filter detail.
    The countable work bound (merged <= sequential) is asserted here; wall
    clock is reported, never asserted.
    """
    specs = [s for src in filter_sources for s in parse_filters(src)]
    if len(specs) < 2:
        raise ScenarioError("need at least 2 filters to compare")
    events = record_events(program_source, goal)

    merged = MergedMatcher(specs, dispatch=True)
    t0 = time.perf_counter_ns()
    merged_tags = [merged.match_event(ev) for ev in events]
    merged_wall = time.perf_counter_ns() - t0
    merged_evals = merged.counters.predicate_evaluations

    per_filter = []
    seq_evals = 0
    t0 = time.perf_counter_ns()
    seq_tags: list[set] = [set() for _ in events]
    for spec in specs:
        single = MergedMatcher([spec], dispatch=False)
        for i, ev in enumerate(events):
            if single.match_event(ev):
                seq_tags[i].add(spec.id)
        per_filter.append({"id": spec.id, "evaluations": single.counters.predicate_evaluations})
        seq_evals += single.counters.predicate_evaluations
    seq_wall = time.perf_counter_ns() - t0

    if [set(t) for t in merged_tags] != seq_tags:
        raise ScenarioError("merged and sequential tag streams disagree")
    if merged_evals > seq_evals:
        raise ScenarioError(
            "work bound violated: merged %d > sequential %d" % (merged_evals, seq_evals)
        )
    return {
        "events": len(events),
        "filters": len(specs),
        "merged_evaluations": merged_evals,
        "sequential_evaluations": seq_evals,
        "ratio": merged_evals / seq_evals if seq_evals else 1.0,
        "merged_wall_ns": merged_wall,
        "sequential_wall_ns": seq_wall,
        "per_filter": per_filter,
    }


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_COLUMNS = [
    ("scenario", "%s"),
    ("mode", "%s"),
    ("events_emitted", "%d"),
    ("events_delivered", "%d"),
    ("bytes_total", "%d"),
    ("predicate_evaluations", "%d"),
    ("solutions", "%d"),
    ("t_prog_ms", "%.3f"),
    ("t_core_ms", "%.3f"),
    ("t_cond_ms", "%.3f"),
    ("t_extract_ms", "%.3f"),
    ("t_encode_com_ms", "%.3f"),
    ("wall_ms", "%.3f"),
]


def _row_values(r: WorkloadReport) -> dict:
    ms = lambda ns: (ns or 0) / 1e6  # noqa: E731
    return {
        "scenario": r.scenario,
        "mode": r.mode,
        "events_emitted": r.events_emitted,
        "events_delivered": r.events_delivered,
        "bytes_total": r.bytes_total,
        "predicate_evaluations": r.predicate_evaluations,
        "solutions": r.solutions,
        "t_prog_ms": ms(r.t_prog_ns),
        "t_core_ms": ms(r.t_core_ns),
        "t_cond_ms": ms(r.t_cond_ns),
        "t_extract_ms": ms(r.t_extract_ns),
        "t_encode_com_ms": ms(r.t_encode_com_ns),
        "wall_ms": ms(r.wall_ns),
    }


def render_report(reports: list[WorkloadReport]) -> tuple[str, str]:
    """Fixed-column text table and machine-readable CSV."""
    fill_t_core(reports)
    rows = [_row_values(r) for r in reports]
    headers = [name for name, _ in _COLUMNS]

    rendered = []
    for row in rows:
        rendered.append([fmt % row[name] if not isinstance(row[name], str) else row[name] for name, fmt in _COLUMNS])
    widths = [max(len(h), *(len(line[i]) for line in rendered)) if rendered else len(h) for i, h in enumerate(headers)]
    out = io.StringIO()
    out.write("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip() + "\n")
    out.write("  ".join("-" * widths[i] for i in range(len(headers))) + "\n")
    for line in rendered:
        out.write("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip() + "\n")

    for r in reports:
        for an in r.analyzers:
            out.write(
                "  analyzer %s on %s: events=%d t_filter_ms=%.3f t_decode_ms=%.3f t_rebuild_ms=%.3f t_exec_ms=%.3f\n"
                % (
                    an.get("analyzer", "?"),
                    r.scenario,
                    an.get("events", 0),
                    an["timings"]["t_filter_ns"] / 1e6,
                    an["timings"]["t_decode_ns"] / 1e6,
                    an["timings"]["t_rebuild_ns"] / 1e6,
                    an["timings"]["t_exec_ns"] / 1e6,
                )
            )

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=headers)
    writer.writeheader()
    for row in rows:
        writer.writerow({name: (fmt % row[name]) if not isinstance(row[name], str) else row[name] for name, fmt in _COLUMNS})
    return out.getvalue(), buf.getvalue()


def parse_report_csv(text: str) -> list[dict]:
    """Inverse of render_report's CSV half (numeric fields as floats/ints)."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        parsed: dict = {}
        for key, value in row.items():
            if key in ("scenario", "mode"):
                parsed[key] = value
            elif key.endswith("_ms"):
                parsed[key] = float(value)
            else:
                parsed[key] = int(value)
        out.append(parsed)
    return out
