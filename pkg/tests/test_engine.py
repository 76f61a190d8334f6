from __future__ import annotations

import pytest

from conftest import run_events
from oracles import brute_force_csp, brute_force_queens
from tracelens.corpus import BENCH_SOURCE, queens_program, random_csp, random_logic_program
from tracelens.engine import (
    Engine,
    EngineError,
    NoRuleApplicable,
    ParseError,
    load_program,
    parse_term,
    run,
)
from tracelens.engine.constraints import is_bounds_consistent
from tracelens.trace_model import apply_delta, validate_trace


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class TestLoadProgram:
    def test_bench_program_has_two_clauses(self):
        prog = load_program(BENCH_SOURCE)
        assert len(prog.clauses) == 2
        assert prog.defines("bench/1")

    def test_empty_program(self):
        assert load_program("").clauses == []

    def test_malformed_clause_reports_location(self):
        with pytest.raises(ParseError) as err:
            load_program("p(:-.")
        assert err.value.line == 1

    def test_comments_ignored(self):
        prog = load_program("% nothing here\np(1). % trailing\n")
        assert len(prog.clauses) == 1

    def test_operator_precedence(self):
        from tracelens.engine import render

        t = parse_term("N1 is N-1*2")
        assert render(t) == "N1 is N-1*2"


# ---------------------------------------------------------------------------
# The reference run: bench(2)
# ---------------------------------------------------------------------------

# ports and Byrd columns of the full bench(2) run, replayed by hand from the
# resolution semantics (first seven lines mirror the classic listing)
BENCH2_TRACE = [
    (1, "call", 1, 1, "'$call$'(bench(2))"),
    (2, "call", 2, 2, "bench(2)"),
    (3, "call", 3, 3, "2>0"),
    (4, "exit", 3, 3, "2>0"),
    (5, "call", 4, 3, "_182 is 2-1"),
    (6, "exit", 4, 3, "1 is 2-1"),
    (7, "call", 5, 3, "bench(1)"),
    (8, "call", 6, 4, "1>0"),
    (9, "exit", 6, 4, "1>0"),
    (10, "call", 7, 4, "_184 is 1-1"),
    (11, "exit", 7, 4, "0 is 1-1"),
    (12, "call", 8, 4, "bench(0)"),
    (13, "exit", 8, 4, "bench(0)"),
    (14, "exit", 5, 3, "bench(1)"),
    (15, "exit", 2, 2, "bench(2)"),
    (16, "exit", 1, 1, "'$call$'(bench(2))"),
    (17, "solution", 1, 1, "'$call$'(bench(2))"),
    (18, "backTo", 8, 4, "bench(0)"),
    (19, "redo", 8, 4, "bench(0)"),
    (20, "call", 9, 5, "0>0"),
    (21, "fail", 9, 5, "0>0"),
    (22, "fail", 8, 4, "bench(0)"),
    (23, "fail", 5, 3, "bench(1)"),
    (24, "fail", 2, 2, "bench(2)"),
    (25, "fail", 1, 1, "'$call$'(bench(2))"),
]


class TestBench2:
    def test_full_trace_matches_hand_replay(self, bench2):
        _, events = bench2
        got = [
            (e.chrono, e.port, e.attrs["depths"][0], e.attrs["depths"][1], e.attrs["goal"])
            for e in events
        ]
        assert got == BENCH2_TRACE

    def test_first_seven_ports(self, bench2):
        _, events = bench2
        assert [e.port for e in events[:7]] == ["call", "call", "call", "exit", "call", "exit", "call"]

    def test_one_solution(self, bench2):
        engine, _ = bench2
        assert engine.solutions == 1

    def test_nondeterministic_call_leaves_choice_point(self, bench2):
        engine, events = bench2
        # bench(0) unifies both clause heads: one choicePoint search node
        cps = [n for n in engine.search.values() if n.kind == "choicePoint"]
        assert len(cps) == 1
        assert cps[0].untried == 0  # consumed by the redo


class TestSmallGoals:
    def test_true_runs_call_exit_wrapped(self):
        engine, events = run_events("", "true")
        ports = [e.port for e in events]
        assert ports == ["call", "call", "exit", "exit", "solution"]
        assert engine.solutions == 1

    def test_unknown_top_level_predicate_rejected(self):
        with pytest.raises(EngineError):
            run(load_program(""), parse_term("nosuch(1)"))

    def test_undefined_predicate_mid_run_raises_exception_event(self):
        engine, events = run_events("p :- q(1).", "p")
        assert [e.port for e in events] == ["call", "call", "call", "exception", "fail", "fail"]
        err = events[3].attrs["detail"]["error"]
        assert "q/1" in err

    def test_unbound_arithmetic_is_exception(self):
        _, events = run_events("p(X) :- X > 1.", "p(_)")
        assert "exception" in [e.port for e in events]

    def test_multi_fact_backtracking_all_solutions(self):
        engine, events = run_events("item(1). item(2). item(3).", "item(_)")
        assert engine.solutions == 3
        assert [e.port for e in events].count("redo") == 2

    def test_silent_clause_retry_has_no_redo(self):
        # first clause body fails before the box ever exits: the next clause
        # is entered through backTo alone, invisible to Byrd ports
        engine, events = run_events("q :- 0>1. q :- true.", "q")
        ports = [e.port for e in events]
        assert engine.solutions == 1
        assert "redo" not in ports
        assert ports.count("backTo") == 1

    def test_conjunction_goal(self):
        engine, _ = run_events("p(1). p(2).", "p(X), X>1")
        assert engine.solutions == 1


# ---------------------------------------------------------------------------
# Solver behaviour
# ---------------------------------------------------------------------------


class TestSolver:
    def test_less_than_narrows_bounds(self):
        engine, events = run_events("", "fd_domain([X],1,5), fd_domain([Y],1,3), fd_post(X #< Y)")
        reduces = [e for e in events if e.port == "reduce"]
        assert reduces[0].attrs["detail"] == {"variable": "X", "removed": [[3, 5]], "cid": 1}
        assert engine.fd_doms["X"].to_json() == [[1, 2]]
        assert engine.fd_doms["Y"].to_json() == [[2, 3]]

    def test_failed_posting_wipes_domain_then_solver_fail(self):
        engine, events = run_events("", "fd_domain([X],1,3), fd_post(X #> 5)")
        ports = [e.port for e in events]
        assert "solverFail" in ports
        ix = ports.index("solverFail")
        assert engine.solutions == 0
        # the wiped domain coincides with the failure event
        assert events[ix].delta is not None

    def test_empty_domain_only_after_solver_fail(self):
        inst = random_csp(11, n_vars=3, dom_size=3, n_constraints=4)
        engine = Engine(load_program(inst.program.source), parse_term(inst.program.goal))
        prev_port = None
        while not engine.is_terminal():
            ev = engine.step()
            empties = [v for v, d in engine.fd_doms.items() if d.is_empty()]
            if empties:
                assert ev.port == "solverFail"
            prev_port = ev.port

    def test_bounds_consistent_at_fixpoints(self):
        cp = queens_program(4)
        engine = Engine(load_program(cp.source), parse_term(cp.goal))
        checked = 0
        while not engine.is_terminal():
            engine.step()
            if not engine.queue and not engine.staged and not engine.failing:
                for con in engine.store.values():
                    assert is_bounds_consistent(con, engine.fd_doms)
                    checked += 1
        assert checked > 100

    def test_labeling_is_deterministic_leftmost_ascending(self):
        _, events = run_events("", "fd_domain([A,B],1,2), fd_labeling([A,B])")
        labels = [(e.attrs["detail"]["variable"], e.attrs["detail"]["value"]) for e in events if e.port == "label"]
        assert labels[0] == ("A", 1)
        assert labels[1] == ("B", 1)

    @pytest.mark.parametrize("n,expected", [(4, 2), (6, 4)])
    def test_queens_solutions(self, n, expected):
        cp = queens_program(n)
        engine, _ = run_events(cp.source, cp.goal)
        assert engine.solutions == expected == brute_force_queens(n)

    @pytest.mark.parametrize("seed", range(8))
    def test_random_csp_matches_enumeration(self, seed):
        inst = random_csp(seed)
        engine, _ = run_events(inst.program.source, inst.program.goal)
        expected = brute_force_csp(inst.var_names, inst.domain, inst.constraints)
        assert engine.solutions == expected


# ---------------------------------------------------------------------------
# Rule-table properties
# ---------------------------------------------------------------------------

CORPUS = [
    (BENCH_SOURCE, "bench(3)"),
    (queens_program(4).source, "queens"),
    (random_csp(5).program.source, "csp"),
    (random_logic_program(3).source, "main"),
]


class TestRuleTable:
    @pytest.mark.parametrize("source,goal", CORPUS)
    def test_exactly_one_rule_applicable(self, source, goal):
        engine = Engine(load_program(source), parse_term(goal))
        while not engine.is_terminal():
            rules = engine.applicable_rules()
            assert len(rules) == 1, "ambiguous state: %s" % [r.name for r in rules]
            engine.step()

    def test_applicable_rules_raises_on_terminal(self):
        engine, _ = run_events("", "true")
        with pytest.raises(NoRuleApplicable):
            engine.applicable_rules()

    def test_back_to_rule_carries_instantiation_hint(self):
        engine = Engine(load_program(BENCH_SOURCE), parse_term("bench(2)"))
        hints = []
        while not engine.is_terminal():
            rules = engine.applicable_rules()
            if rules[0].name == "backTo":
                hints.append(rules[0].instantiation_hint(engine))
            engine.step()
        assert hints == [1]  # the bench(0) choice point's label

    @pytest.mark.parametrize("source,goal", CORPUS)
    def test_byrd_consistency(self, source, goal):
        """exit/fail match an earlier call; redo only after exit."""
        _, events = run_events(source, goal)
        called, exited = set(), set()
        for ev in events:
            if "depths" not in ev.attrs:
                continue
            inv = ev.attrs["depths"][0]
            if ev.port == "call":
                called.add(inv)
            elif ev.port in ("exit",):
                assert inv in called
                exited.add(inv)
            elif ev.port in ("fail", "exception"):
                assert inv in called
            elif ev.port == "redo":
                assert inv in exited

    @pytest.mark.parametrize("source,goal", CORPUS)
    def test_stream_is_continuous_and_replayable(self, source, goal):
        engine = Engine(load_program(source), parse_term(goal))
        mirror = engine.snapshot()
        events = []
        k = 0
        while not engine.is_terminal():
            ev = engine.step()
            events.append(ev)
            mirror = apply_delta(mirror, ev)
            k += 1
            if k % 50 == 0:
                assert mirror == engine.snapshot()
        assert mirror == engine.snapshot()
        assert validate_trace(events, continuous=True).ok

    def test_full_state_referential_integrity(self):
        cp = queens_program(6)
        engine = Engine(load_program(cp.source), parse_term(cp.goal))
        k = 0
        while not engine.is_terminal():
            ev = engine.step()
            k += 1
            if k % 100 != 0:
                continue
            state = engine.snapshot()
            assert state.current_node in state.search_nodes
            for text in state.constraint_store.values():
                assert text  # canonical rendering present
            for con in engine.store.values():
                for var in con.vars():
                    assert var in state.fd_vars
            for var, dom in state.fd_vars.items():
                assert not dom.is_empty() or ev.port == "solverFail"

    def test_determinism_across_runs(self):
        cp = queens_program(4)
        a = run_events(cp.source, cp.goal)[1]
        b = run_events(cp.source, cp.goal)[1]
        assert [(e.chrono, e.port, e.attrs.get("goal")) for e in a] == [
            (e.chrono, e.port, e.attrs.get("goal")) for e in b
        ]


# ---------------------------------------------------------------------------
# Snapshots and run()
# ---------------------------------------------------------------------------


class TestSnapshotAndRun:
    def test_snapshot_at_chrono_zero_is_initial_state(self):
        engine = Engine(load_program(BENCH_SOURCE), parse_term("bench(2)"))
        s0 = engine.snapshot()
        assert s0.chrono == 0
        assert s0.goal_stack == ["'$call$'(bench(2))"]
        assert s0.proof_nodes == {}
        assert list(s0.search_nodes) == [0]

    def test_snapshot_equals_delta_replay(self):
        cp = queens_program(4)
        engine = Engine(load_program(cp.source), parse_term(cp.goal))
        mirror = engine.snapshot()
        for _ in range(100):
            mirror = apply_delta(mirror, engine.step())
        assert engine.snapshot() == mirror

    def test_snapshot_includes_all_variables_and_domains(self):
        cp = queens_program(4)
        engine = Engine(load_program(cp.source), parse_term(cp.goal))
        for _ in range(80):
            engine.step()
        snap = engine.snapshot()
        assert len(snap.fd_vars) == 4
        for dom in snap.fd_vars.values():
            assert not dom.is_empty() or True

    def test_run_emits_snapshot_then_events(self):
        from tracelens.engine import TraceSink

        seen = {"snapshot": 0, "events": 0}

        class Sink(TraceSink):
            def on_snapshot(self, state):
                assert seen["events"] == 0
                seen["snapshot"] += 1

            def on_event(self, event):
                seen["events"] += 1

        result = run(load_program(BENCH_SOURCE), parse_term("bench(2)"), sink=Sink())
        assert seen == {"snapshot": 1, "events": 25}
        assert result.solutions == 1
        assert result.final_chrono == 25

    def test_checkpoints_fire_on_schedule(self):
        marks = []
        run(
            load_program(BENCH_SOURCE),
            parse_term("bench(4)"),
            checkpoint_every=10,
            on_checkpoint=lambda s: marks.append(s.chrono),
        )
        assert marks and all(c % 10 == 0 for c in marks)

    def test_off_mode_still_counts_solutions(self):
        cp = queens_program(4)
        result = run(load_program(cp.source), parse_term(cp.goal), trace=False)
        assert result.solutions == 2

    def test_sink_failure_aborts_run(self):
        from tracelens.engine import TraceSink

        class Boom(Exception):
            pass

        class FailingSink(TraceSink):
            def __init__(self):
                self.seen = 0

            def on_event(self, event):
                self.seen += 1
                if self.seen == 3:
                    raise Boom()

        sink = FailingSink()
        with pytest.raises(Boom):
            run(load_program(BENCH_SOURCE), parse_term("bench(2)"), sink=sink)
        assert sink.seen == 3
