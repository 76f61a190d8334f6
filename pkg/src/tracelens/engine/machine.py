"""The observed process: a deterministic CLP(FD) resolution engine.

The engine is a small-step machine over an explicit rule table. At every
non-terminal state exactly one rule fires (the table is scanned in a fixed
priority order and conditions are written to be disjoint); each firing
produces exactly one trace event whose delta describes precisely how the
observable full state changed.

Byrd ports (call/exit/fail/redo/exception) cover plain resolution; the
solver layer adds newVariable/post/awake/reduce/entail/solverFail and the
search ports choicePoint/label/backTo/solution. Backtracking restores the
observable state through a trail, and the undo operations themselves become
delta ops so an analyzer mirror never desynchronizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from ..trace_model import (
    PROOF,
    SEARCH,
    AddConstraint,
    AddProofNode,
    AddSearchNode,
    Domain,
    FullState,
    IncrSolutions,
    NarrowDomain,
    PopGoal,
    ProofNode,
    PushGoal,
    RemoveConstraint,
    SearchNode,
    SetCurrentNode,
    SetDomain,
    SetNodeStatus,
    SetQueue,
    StateDelta,
    TraceEvent,
)
from . import constraints as fd
from .program import BUILTINS, Clause, Program
from .terms import (
    ArithmeticError_,
    Atom,
    Int,
    Struct,
    Term,
    Var,
    VarNamer,
    arith_eval,
    deref,
    indicator,
    list_items,
    rename,
    render,
    unify,
)


class NoRuleApplicable(Exception):
    """No rule condition held on a non-terminal state: an engine bug."""


class NotAtBoundary(Exception):
    """snapshot() was called while a step was in flight."""


class EngineError(Exception):
    """Unrecoverable misuse (bad goal, unknown top-level predicate)."""


@dataclass
class Frame:
    """One invocation box. ``node`` doubles as the invocation number."""

    node: int
    goal: Term
    pred: str
    depth: int
    builtin: Optional[str]  # builtin name, or None for user predicates
    birth_ix: int
    body: Optional[tuple] = None  # selected-clause candidates consumed lazily
    bstate: dict = field(default_factory=dict)
    pending: Optional[tuple] = None  # ("fail",) | ("exception", message)


@dataclass
class Candidate:
    clause: Clause
    head: Term
    body: tuple[Term, ...]


@dataclass
class ChoicePoint:
    label: int
    kind: str  # "clause" | "label"
    frame: Frame
    trail_ix: int
    remaining: list  # Candidates, or labeling values
    var: Optional[str] = None


@dataclass
class OsRule:
    """One observational-semantics rule: fires when its condition holds."""

    name: str
    condition: Callable[["Engine"], bool]
    effect: Callable[["Engine"], TraceEvent]
    instantiation_hint: Optional[Callable[["Engine"], object]] = None


@dataclass
class RunResult:
    solutions: int
    final_chrono: int
    events: int
    search_nodes: int


class TraceSink:
    """Receives the initial state and then one event per engine step."""

    def on_snapshot(self, state: FullState) -> None:  # pragma: no cover - interface
        pass

    def on_event(self, event: TraceEvent) -> None:  # pragma: no cover - interface
        pass


_EVAL_BUILTINS = {">", "<", ">=", "=<", "=", "is", "true"}


class Engine:
    """Deterministic depth-first resolution with finite-domain propagation.

    Single-threaded; callers drive it one ``step()`` at a time and may only
    observe state (``snapshot``) between steps. With ``trace=False`` the
    machine still runs and backtracks correctly but skips building deltas and
    attribute maps (the deactivated-tracer mode used for baseline timing).
    """

    def __init__(self, program: Program, goal: Term, trace: bool = True):
        self.program = program
        self.trace_enabled = trace
        self.namer = VarNamer()

        # observable state
        self.chrono = 0
        self.goal_texts: list[str] = []
        self.proof: dict[int, ProofNode] = {}
        self.search: dict[int, SearchNode] = {0: SearchNode(None, "and", 0)}
        self.current = 0
        self.fd_doms: dict[str, Domain] = {}
        self.store: dict[int, fd.Constraint] = {}
        self.queue: list[int] = []
        self.solutions = 0

        # control state (not part of the full state)
        self.todo: list[tuple[Term, Optional[Frame]]] = []
        self.frames: list[Frame] = []
        self.cp_stack: list[ChoicePoint] = []
        self.trail: list[tuple] = []
        self.staged: list[tuple] = []  # ("narrow", var, removed, cid) | ("entail", cid)
        self.failing = False
        self.at_cp: Optional[ChoicePoint] = None
        self.pending_label: Optional[tuple[ChoicePoint, int]] = None
        self.queue_set: set[int] = set()
        self.watchers: dict[str, list[int]] = {}
        self.fd_cells: dict[str, Var] = {}

        self._next_node = 0
        self._next_label = 0
        self._next_cid = 0
        self._ops: Optional[list] = None
        self._in_step = False
        self._done = False

        root_goal = deref(goal)
        if isinstance(root_goal, Var):
            raise EngineError("goal is an unbound variable")
        self.root_goal = Struct("$call$", (root_goal,))
        self._push_goal(self.root_goal, None)
        self.rules = self._build_rules()

    # ------------------------------------------------------------------
    # Mutation helpers: every observable change goes through one of these
    # so the trail and the per-step delta stay in lockstep.
    # ------------------------------------------------------------------

    def _log(self, op) -> None:
        if self._ops is not None:
            self._ops.append(op)

    def _render(self, term: Term) -> str:
        # attribute text is tracer work; the deactivated tracer skips it
        return render(term) if self.trace_enabled else ""

    def _push_goal(self, term: Term, owner: Optional[Frame]) -> None:
        text = self._render(term)
        self.todo.append((term, owner))
        self.goal_texts.append(text)
        self.trail.append(("gpush",))
        self._log(PushGoal(text))

    def _pop_goal(self) -> tuple[Term, Optional[Frame]]:
        term, owner = self.todo.pop()
        text = self.goal_texts.pop()
        self.trail.append(("gpop", text, term, owner))
        self._log(PopGoal())
        return term, owner

    def _push_frame(self, frame: Frame) -> None:
        self.frames.append(frame)
        self.trail.append(("fpush",))

    def _pop_frame(self) -> Frame:
        frame = self.frames.pop()
        self.trail.append(("fpop", frame))
        return frame

    def _add_proof(self, parent: Optional[int], goal_text: str) -> int:
        self._next_node += 1
        nid = self._next_node
        depth = 1 if parent is None else self.proof[parent].depth + 1
        self.proof[nid] = ProofNode(parent, goal_text, "open", depth)
        self._log(AddProofNode(parent, nid, goal_text))
        return nid

    def _set_proof_status(self, nid: int, status: str, permanent: bool = False) -> None:
        node = self.proof[nid]
        if node.status == status:
            return
        # failures stick (a dead attempt stays in the record); proved/open
        # flips are undone when backtracking reopens the box
        if not permanent:
            self.trail.append(("pstat", nid, node.status))
        node.status = status
        self._log(SetNodeStatus(PROOF, nid, status))

    def _add_search(self, parent: int, kind: str, untried: int = 0) -> int:
        self._next_label += 1
        label = self._next_label
        self.search[label] = SearchNode(parent, kind, untried)
        self._log(AddSearchNode(parent, label, kind))
        if untried:
            self._log(SetNodeStatus(SEARCH, label, untried))
        return label

    def _set_untried(self, label: int, untried: int) -> None:
        # consumption of an alternative survives backtracking by design
        self.search[label].untried = untried
        self._log(SetNodeStatus(SEARCH, label, untried))

    def _set_current(self, label: int) -> None:
        if self.current != label:
            self.current = label
            self._log(SetCurrentNode(label))

    def _new_fd_var(self, cell: Var, dom: Domain) -> str:
        name = cell.name
        if name in self.fd_doms:
            raise fd.ConstraintError("variable %s already has a domain" % name)
        self.fd_doms[name] = dom
        self.fd_cells[name] = cell
        self.watchers.setdefault(name, [])
        self.trail.append(("dom_new", name))
        self._log(SetDomain(name, dom))
        if dom.is_singleton() and cell.ref is None:
            cell.ref = Int(dom.value)
            self.trail.append(("bind", cell))
        return name

    def _narrow(self, name: str, removed: Domain) -> None:
        old = self.fd_doms[name]
        new = old.subtract(removed)
        self.trail.append(("dom", name, old))
        self.fd_doms[name] = new
        self._log(NarrowDomain(name, removed))
        if new.is_singleton():
            cell = self.fd_cells[name]
            if cell.ref is None:
                cell.ref = Int(new.value)
                self.trail.append(("bind", cell))

    def _add_constraint(self, con: fd.Constraint) -> None:
        self.store[con.cid] = con
        for v in con.vars():
            self.watchers.setdefault(v, []).append(con.cid)
        self.trail.append(("store_add", con.cid, con))
        self._log(AddConstraint(con.cid, con.text()))

    def _remove_constraint(self, cid: int) -> None:
        con = self.store.pop(cid)
        for v in con.vars():
            self.watchers[v].remove(cid)
        self.trail.append(("store_del", cid, con))
        self._log(RemoveConstraint(cid))

    def _set_queue(self, ids: list[int]) -> None:
        self.queue = ids
        self.queue_set = set(ids)
        self._log(SetQueue(tuple(ids)))

    def _wake(self, name: str, exclude: Optional[int]) -> None:
        added = False
        for cid in self.watchers.get(name, ()):
            if cid != exclude and cid in self.store and cid not in self.queue_set:
                self.queue.append(cid)
                self.queue_set.add(cid)
                added = True
        if added:
            self._log(SetQueue(tuple(self.queue)))

    def _bstate_set(self, frame: Frame, key: str, value) -> None:
        self.trail.append(("bstate", frame, key, frame.bstate.get(key)))
        frame.bstate[key] = value

    def _set_body(self, frame: Frame, body: Optional[tuple]) -> None:
        self.trail.append(("fbody", frame, frame.body))
        frame.body = body

    # ------------------------------------------------------------------
    # Trail undo
    # ------------------------------------------------------------------

    def _undo_to(self, mark: int) -> None:
        """Rewind the trail, emitting the restore as delta ops.

        Goal-stack ops must keep their relative order; domain and proof
        status restores collapse to their final value to keep backTo deltas
        small.
        """
        dom_final: dict[str, Domain] = {}
        stat_final: dict[int, str] = {}
        while len(self.trail) > mark:
            entry = self.trail.pop()
            tag = entry[0]
            if tag == "bind":
                entry[1].ref = None
            elif tag == "gpush":
                self.todo.pop()
                self.goal_texts.pop()
                self._log(PopGoal())
            elif tag == "gpop":
                _, text, term, owner = entry
                self.todo.append((term, owner))
                self.goal_texts.append(text)
                self._log(PushGoal(text))
            elif tag == "fpush":
                self.frames.pop()
            elif tag == "fpop":
                self.frames.append(entry[1])
            elif tag == "dom":
                _, name, old = entry
                self.fd_doms[name] = old
                dom_final[name] = old
            elif tag == "dom_new":
                pass  # the entry keeps its creation-time domain
            elif tag == "store_add":
                _, cid, con = entry
                del self.store[cid]
                for v in con.vars():
                    self.watchers[v].remove(cid)
                self._log(RemoveConstraint(cid))
            elif tag == "store_del":
                _, cid, con = entry
                self.store[cid] = con
                for v in con.vars():
                    self.watchers[v].append(cid)
                self._log(AddConstraint(cid, con.text()))
            elif tag == "pstat":
                _, nid, old = entry
                self.proof[nid].status = old
                stat_final[nid] = old
            elif tag == "fbody":
                _, frame, old = entry
                frame.body = old
            elif tag == "bstate":
                _, frame, key, old = entry
                frame.bstate[key] = old
            else:  # pragma: no cover - defensive
                raise AssertionError("unknown trail tag %r" % tag)
        for name, dom in dom_final.items():
            self._log(SetDomain(name, dom))
        for nid, status in stat_final.items():
            self._log(SetNodeStatus(PROOF, nid, status))

    # ------------------------------------------------------------------
    # Rule table
    # ------------------------------------------------------------------

    def _quiet(self) -> bool:
        """No propagation work pending and no retry in flight."""
        return not self.staged and not self.queue and not self.failing and self.at_cp is None and self.pending_label is None

    def _innermost(self) -> Optional[Frame]:
        return self.frames[-1] if self.frames else None

    # conditions ---------------------------------------------------------

    def _cond_solver_fail(self) -> bool:
        return bool(self.staged) and self.staged[0][0] == "narrow" and self.staged[0][2] == self.fd_doms[self.staged[0][1]]

    def _cond_back_to(self) -> bool:
        if not self.failing or not self.cp_stack:
            return False
        f = self._innermost()
        return f is None or f.birth_ix <= self.cp_stack[-1].trail_ix

    def _cond_entail(self) -> bool:
        return bool(self.staged) and self.staged[0][0] == "entail"

    def _cond_reduce(self) -> bool:
        return bool(self.staged) and self.staged[0][0] == "narrow" and self.staged[0][2] != self.fd_doms[self.staged[0][1]]

    def _cond_awake(self) -> bool:
        return not self.staged and bool(self.queue) and not self.failing and self.at_cp is None

    def _cond_post(self) -> bool:
        if not self._quiet():
            return False
        f = self._innermost()
        return f is not None and f.builtin == "fd_post" and not f.bstate.get("posted") and f.pending is None

    def _cond_new_variable(self) -> bool:
        if not self._quiet():
            return False
        f = self._innermost()
        return f is not None and f.builtin == "fd_domain" and bool(f.bstate.get("pending")) and f.pending is None

    def _cond_builtin_conclude(self) -> bool:
        if not self._quiet():
            return False
        f = self._innermost()
        if f is None:
            return False
        if f.pending is not None:
            return True
        if f.builtin is None:
            return False
        return self._builtin_complete(f)

    def _cond_call(self) -> bool:
        if not self._quiet() or not self.todo:
            return False
        return self.todo[-1][1] is self._innermost()

    def _cond_exit(self) -> bool:
        if not self._quiet():
            return False
        f = self._innermost()
        if f is None or f.builtin is not None or f.pending is not None:
            return False
        return not self.todo or self.todo[-1][1] is not f

    def _cond_redo(self) -> bool:
        return self.at_cp is not None and self.at_cp.kind == "clause"

    def _cond_fail(self) -> bool:
        if not self.failing or not self.frames:
            return False
        return not self.cp_stack or self.frames[-1].birth_ix > self.cp_stack[-1].trail_ix

    def _cond_choice_point(self) -> bool:
        if not self._quiet():
            return False
        f = self._innermost()
        return (
            f is not None
            and f.builtin == "fd_labeling"
            and f.pending is None
            and self._labeling_pick(f) is not None
        )

    def _cond_label(self) -> bool:
        if self.pending_label is not None:
            return True
        return self.at_cp is not None and self.at_cp.kind == "label"

    def _cond_solution(self) -> bool:
        return not self.failing and not self.frames and not self.todo and self.at_cp is None and not self.staged and not self.queue

    def _build_rules(self) -> list[OsRule]:
        return [
            OsRule("solverFail", lambda e: e._cond_solver_fail(), lambda e: e._do_solver_fail()),
            OsRule(
                "backTo",
                lambda e: e._cond_back_to(),
                lambda e: e._do_back_to(),
                instantiation_hint=lambda e: e.cp_stack[-1].label if e.cp_stack else None,
            ),
            OsRule("entail", lambda e: e._cond_entail(), lambda e: e._do_entail()),
            OsRule("reduce", lambda e: e._cond_reduce(), lambda e: e._do_reduce()),
            OsRule("awake", lambda e: e._cond_awake(), lambda e: e._do_awake()),
            OsRule("post", lambda e: e._cond_post(), lambda e: e._do_post()),
            OsRule("newVariable", lambda e: e._cond_new_variable(), lambda e: e._do_new_variable()),
            OsRule("builtin exit/fail", lambda e: e._cond_builtin_conclude(), lambda e: e._do_builtin_conclude()),
            OsRule("call", lambda e: e._cond_call(), lambda e: e._do_call()),
            OsRule("exit", lambda e: e._cond_exit(), lambda e: e._do_exit()),
            OsRule("redo", lambda e: e._cond_redo(), lambda e: e._do_redo()),
            OsRule("fail", lambda e: e._cond_fail(), lambda e: e._do_fail()),
            OsRule("choicePoint", lambda e: e._cond_choice_point(), lambda e: e._do_choice_point()),
            OsRule("label", lambda e: e._cond_label(), lambda e: e._do_label()),
            OsRule("solution", lambda e: e._cond_solution(), lambda e: e._do_solution()),
        ]

    # ------------------------------------------------------------------
    # Public driving surface
    # ------------------------------------------------------------------

    def is_terminal(self) -> bool:
        return self.failing and not self.frames and not self.cp_stack and self.at_cp is None

    def applicable_rules(self) -> list[OsRule]:
        if self.is_terminal():
            raise NoRuleApplicable("terminal state")
        rules = [r for r in self.rules if r.condition(self)]
        if not rules:
            raise NoRuleApplicable("no rule applies at chrono %d" % self.chrono)
        return rules

    def step(self) -> TraceEvent:
        """Apply the highest-priority applicable rule; emit its event."""
        if self.is_terminal():
            raise NoRuleApplicable("terminal state")
        self._in_step = True
        self._ops = [] if self.trace_enabled else None
        try:
            for rule in self.rules:
                if rule.condition(self):
                    self.chrono += 1
                    return rule.effect(self)
            raise NoRuleApplicable("no rule applies at chrono %d" % self.chrono)
        finally:
            self._ops = None
            self._in_step = False

    def snapshot(self) -> FullState:
        """Deep copy of the observable state; legal only between steps."""
        if self._in_step:
            raise NotAtBoundary("engine is mid-step")
        return FullState(
            chrono=self.chrono,
            goal_stack=list(self.goal_texts),
            proof_nodes={k: ProofNode(n.parent, n.goal, n.status, n.depth) for k, n in self.proof.items()},
            search_nodes={k: SearchNode(n.parent, n.kind, n.untried) for k, n in self.search.items()},
            current_node=self.current,
            fd_vars=dict(self.fd_doms),
            constraint_store={cid: con.text() for cid, con in self.store.items()},
            propagation_queue=list(self.queue),
            solutions=self.solutions,
        )

    def domains_for(self, detail: dict) -> dict[str, list[list[int]]]:
        """Current domains of the variables an event's detail touches."""
        out: dict[str, list[list[int]]] = {}
        names = []
        if "variable" in detail:
            names.append(detail["variable"])
        cid = detail.get("cid")
        if cid is not None and cid in self.store:
            names.extend(self.store[cid].vars())
        for name in names:
            dom = self.fd_doms.get(name)
            if dom is not None:
                out[name] = dom.to_json()
        return out

    # ------------------------------------------------------------------
    # Event assembly
    # ------------------------------------------------------------------

    def _event(self, port: str, frame_info: tuple[int, int], goal_text: str, pred: str, detail: dict) -> TraceEvent:
        if not self.trace_enabled:
            return TraceEvent(chrono=self.chrono, port=port)
        attrs = {
            "depths": [frame_info[0], frame_info[1]],
            "goal": goal_text,
            "pred": pred,
            "detail": detail,
        }
        return TraceEvent(chrono=self.chrono, port=port, attrs=attrs, delta=StateDelta(tuple(self._ops or ())))

    @staticmethod
    def _frame_info(frame: Frame) -> tuple[int, int]:
        return frame.node, frame.depth

    # ------------------------------------------------------------------
    # Effects
    # ------------------------------------------------------------------

    def _do_call(self) -> TraceEvent:
        term, owner = self._pop_goal()
        goal = deref(term)
        parent_node = owner.node if owner is not None else None
        depth = 1 if owner is None else owner.depth + 1

        if isinstance(goal, Var):
            text = self._render(goal)
            nid = self._add_proof(parent_node, text)
            frame = Frame(nid, goal, "?/?", depth, None, len(self.trail))
            frame.pending = ("exception", "instantiation_error")
            self._push_frame(frame)
            return self._event("call", (nid, depth), text, "?/?", {"goal": text})
        if isinstance(goal, Int):
            text = self._render(goal)
            nid = self._add_proof(parent_node, text)
            frame = Frame(nid, goal, "int/0", depth, None, len(self.trail))
            frame.pending = ("exception", "type_error: callable expected")
            self._push_frame(frame)
            return self._event("call", (nid, depth), text, "int/0", {"goal": text})

        pred = indicator(goal)
        text = self._render(goal)
        nid = self._add_proof(parent_node, text)

        if pred in BUILTINS:
            frame = Frame(nid, goal, pred, depth, pred.split("/")[0], len(self.trail))
            self._push_frame(frame)
            self._setup_builtin(frame, goal)
            return self._event("call", (nid, depth), text, pred, {"goal": text})

        frame = Frame(nid, goal, pred, depth, None, len(self.trail))
        self._push_frame(frame)

        if pred == "$call$/1":
            candidates = [Candidate(Clause(goal, ()), goal, (goal.args[0],))]
        elif pred == ",/2":
            # conjunction goals (from --goal on the CLI) resolve transparently
            candidates = [Candidate(Clause(goal, ()), goal, (goal.args[0], goal.args[1]))]
        else:
            clauses = self.program.lookup(pred)
            if clauses is None:
                frame.pending = ("exception", "existence_error: %s" % pred)
                return self._event("call", (nid, depth), text, pred, {"goal": text})
            candidates = []
            for clause in clauses:
                mapping: dict[int, Var] = {}
                head = rename(clause.head, mapping, self.namer)
                body = tuple(rename(g, mapping, self.namer) for g in clause.body)
                mark = len(self.trail)
                if unify(goal, head, self.trail):
                    self._undo_bind_only(mark)
                    candidates.append(Candidate(clause, head, body))
                else:
                    self._undo_bind_only(mark)

        if not candidates:
            frame.pending = ("fail",)
            return self._event("call", (nid, depth), text, pred, {"goal": text})

        if len(candidates) >= 2:
            cp_label = self._add_search(self.current, "choicePoint", len(candidates) - 1)
            attempt = self._add_search(cp_label, "and")
            self._set_current(attempt)
            cp = ChoicePoint(cp_label, "clause", frame, len(self.trail), candidates[1:])
            self.cp_stack.append(cp)

        self._select_candidate(frame, candidates[0])
        return self._event("call", (nid, depth), text, pred, {"goal": text})

    def _undo_bind_only(self, mark: int) -> None:
        # candidate trial bindings never touch observable state
        while len(self.trail) > mark:
            tag, cell = self.trail.pop()
            assert tag == "bind"
            cell.ref = None

    def _select_candidate(self, frame: Frame, cand: Candidate) -> None:
        ok = unify(frame.goal, cand.head, self.trail)
        assert ok, "pre-screened candidate failed to unify"
        self._set_body(frame, cand.body)
        for g in reversed(cand.body):
            self._push_goal(g, frame)

    def _setup_builtin(self, frame: Frame, goal: Term) -> None:
        name = frame.builtin
        try:
            if name == "fd_domain":
                items = list_items(goal.args[0])
                lo = arith_eval(goal.args[1])
                hi = arith_eval(goal.args[2])
                pending = []
                for item in items:
                    item = deref(item)
                    if isinstance(item, Int):
                        if not (lo <= item.value <= hi):
                            frame.pending = ("fail",)
                            return
                    elif isinstance(item, Var):
                        if item.name in self.fd_doms or any(c is item for c in pending):
                            frame.pending = ("exception", "variable %s already constrained" % item.name)
                            return
                        pending.append(item)
                    else:
                        frame.pending = ("exception", "fd_domain expects variables or integers")
                        return
                if lo > hi:
                    frame.pending = ("fail",)
                    return
                frame.bstate = {"pending": pending, "lo": lo, "hi": hi}
            elif name == "fd_labeling":
                items = list_items(goal.args[0])
                cells = []
                for item in items:
                    item = deref(item)
                    if isinstance(item, Var):
                        if item.name not in self.fd_doms:
                            frame.pending = ("exception", "variable %s has no domain" % item.name)
                            return
                        cells.append(item)
                    elif not isinstance(item, Int):
                        frame.pending = ("exception", "fd_labeling expects variables or integers")
                        return
                frame.bstate = {"cells": cells}
            elif name == "fd_post":
                frame.bstate = {"posted": False, "term": goal.args[0]}
        except (ValueError, ArithmeticError_) as exc:
            frame.pending = ("exception", str(exc))

    def _builtin_complete(self, frame: Frame) -> bool:
        name = frame.builtin
        if name in _EVAL_BUILTINS:
            return True
        if name == "fd_domain":
            return not frame.bstate.get("pending")
        if name == "fd_post":
            return bool(frame.bstate.get("posted"))
        if name == "fd_labeling":
            return self._labeling_pick(frame) is None
        return True

    def _labeling_pick(self, frame: Frame) -> Optional[str]:
        for cell in frame.bstate.get("cells", ()):
            t = deref(cell)
            if isinstance(t, Var):
                dom = self.fd_doms.get(t.name)
                if dom is not None and dom.size() > 1:
                    return t.name
        return None

    def _do_builtin_conclude(self) -> TraceEvent:
        frame = self.frames[-1]
        info = self._frame_info(frame)
        if frame.pending is not None:
            kind = frame.pending[0]
            self._pop_frame()
            self._set_proof_status(frame.node, "failed", permanent=True)
            self.failing = True
            text = self._render(frame.goal)
            if kind == "fail":
                return self._event("fail", info, text, frame.pred, {"goal": text})
            return self._event(
                "exception", info, text, frame.pred, {"goal": text, "error": frame.pending[1]}
            )

        name = frame.builtin
        if name in _EVAL_BUILTINS:
            try:
                ok = self._eval_builtin(name, frame.goal)
            except ArithmeticError_ as exc:
                self._pop_frame()
                self._set_proof_status(frame.node, "failed", permanent=True)
                self.failing = True
                text = self._render(frame.goal)
                return self._event("exception", info, text, frame.pred, {"goal": text, "error": str(exc)})
            text = self._render(frame.goal)
            self._pop_frame()
            if ok:
                self._set_proof_status(frame.node, "proved")
                return self._event("exit", info, text, frame.pred, {"goal": text})
            self._set_proof_status(frame.node, "failed", permanent=True)
            self.failing = True
            return self._event("fail", info, text, frame.pred, {"goal": text})

        # fd builtins conclude successfully once their work is drained
        text = self._render(frame.goal)
        self._pop_frame()
        self._set_proof_status(frame.node, "proved")
        return self._event("exit", info, text, frame.pred, {"goal": text})

    def _eval_builtin(self, name: str, goal: Term) -> bool:
        if name == "true":
            return True
        a, b = goal.args
        if name == "is":
            return unify(a, Int(arith_eval(b)), self.trail)
        if name == "=":
            return unify(a, b, self.trail)
        x, y = arith_eval(a), arith_eval(b)
        if name == ">":
            return x > y
        if name == "<":
            return x < y
        if name == ">=":
            return x >= y
        if name == "=<":
            return x <= y
        raise AssertionError(name)

    def _do_exit(self) -> TraceEvent:
        frame = self.frames[-1]
        info = self._frame_info(frame)
        text = self._render(frame.goal)
        self._pop_frame()
        self._set_proof_status(frame.node, "proved")
        return self._event("exit", info, text, frame.pred, {"goal": text})

    def _do_fail(self) -> TraceEvent:
        frame = self.frames[-1]
        info = self._frame_info(frame)
        while self.todo and self.todo[-1][1] is frame:
            self._pop_goal()
        self._pop_frame()
        self._set_proof_status(frame.node, "failed", permanent=True)
        text = self._render(frame.goal)
        return self._event("fail", info, text, frame.pred, {"goal": text})

    def _do_solution(self) -> TraceEvent:
        self.solutions += 1
        self._log(IncrSolutions())
        self.failing = True
        text = self._render(self.root_goal)
        detail = {"goal": text, "solutions": self.solutions}
        return self._event("solution", (1, 1), text, indicator(self.root_goal), detail)

    def _do_back_to(self) -> TraceEvent:
        cp = self.cp_stack[-1]
        owner_was_proved = self.proof[cp.frame.node].status == "proved"
        self._undo_to(cp.trail_ix)
        self.staged.clear()
        if self.queue:
            self._set_queue([])
        self._set_current(cp.label)
        self.failing = False
        info = self._frame_info(cp.frame)
        text = self._render(cp.frame.goal)
        detail = {"target": cp.label}

        if cp.kind == "clause" and not owner_was_proved:
            # the box never exited: enter the next clause silently
            cand = cp.remaining.pop(0)
            self._set_untried(cp.label, len(cp.remaining))
            if not cp.remaining:
                self.cp_stack.pop()
            attempt = self._add_search(cp.label, "and")
            self._set_current(attempt)
            self._select_candidate(cp.frame, cand)
        else:
            self.at_cp = cp
        return self._event("backTo", info, text, cp.frame.pred, detail)

    def _do_redo(self) -> TraceEvent:
        cp = self.at_cp
        self.at_cp = None
        frame = cp.frame
        cand = cp.remaining.pop(0)
        self._set_untried(cp.label, len(cp.remaining))
        if not cp.remaining:
            assert self.cp_stack and self.cp_stack[-1] is cp
            self.cp_stack.pop()
        attempt = self._add_search(cp.label, "and")
        self._set_current(attempt)
        self._select_candidate(frame, cand)
        text = self._render(frame.goal)
        return self._event("redo", self._frame_info(frame), text, frame.pred, {"goal": text})

    def _do_choice_point(self) -> TraceEvent:
        frame = self.frames[-1]
        name = self._labeling_pick(frame)
        values = list(self.fd_doms[name].values())
        cp_label = self._add_search(self.current, "choicePoint", len(values) - 1)
        attempt = self._add_search(cp_label, "and")
        self._set_current(attempt)
        cp = ChoicePoint(cp_label, "label", frame, len(self.trail), values[1:], var=name)
        self.cp_stack.append(cp)
        self.pending_label = (cp, values[0])
        detail = {"label": cp_label, "variable": name, "alternatives": len(values)}
        return self._event(
            "choicePoint", self._frame_info(frame), self._render(frame.goal), frame.pred, detail
        )

    def _do_label(self) -> TraceEvent:
        if self.pending_label is not None:
            cp, value = self.pending_label
            self.pending_label = None
        else:
            cp = self.at_cp
            self.at_cp = None
            value = cp.remaining.pop(0)
            self._set_untried(cp.label, len(cp.remaining))
            if not cp.remaining:
                assert self.cp_stack and self.cp_stack[-1] is cp
                self.cp_stack.pop()
            attempt = self._add_search(cp.label, "and")
            self._set_current(attempt)
        name = cp.var
        dom = self.fd_doms[name]
        removed = dom.remove_value(value)
        if not removed.is_empty():
            self._narrow(name, removed)
        self._wake(name, None)
        detail = {"variable": name, "value": value, "label": cp.label}
        return self._event("label", self._frame_info(cp.frame), self._render(cp.frame.goal), cp.frame.pred, detail)

    def _do_post(self) -> TraceEvent:
        frame = self.frames[-1]
        info = self._frame_info(frame)
        try:
            self._next_cid += 1
            con = fd.normalize(frame.bstate["term"], self._next_cid, self._fd_name_of)
        except fd.ConstraintError as exc:
            frame.pending = ("exception", str(exc))
            self._bstate_set(frame, "posted", True)
            # the conclude rule reports the exception on the next step; this
            # event still records the attempted post
            return self._event("post", info, self._render(frame.goal), frame.pred, {"error": str(exc)})
        self._add_constraint(con)
        self.queue.append(con.cid)
        self.queue_set.add(con.cid)
        self._log(SetQueue(tuple(self.queue)))
        self._bstate_set(frame, "posted", True)
        detail = {"cid": con.cid, "constraint": con.text()}
        return self._event("post", info, self._render(frame.goal), frame.pred, detail)

    def _fd_name_of(self, cell: Var) -> str:
        t = deref(cell)
        if isinstance(t, Var):
            if t.name not in self.fd_doms:
                raise fd.ConstraintError("variable %s has no domain" % t.name)
            return t.name
        raise fd.ConstraintError("constraint side already bound")

    def _do_new_variable(self) -> TraceEvent:
        frame = self.frames[-1]
        pending = frame.bstate["pending"]
        cell = pending[0]
        self._bstate_set(frame, "pending", pending[1:])
        dom = Domain.from_bounds(frame.bstate["lo"], frame.bstate["hi"])
        name = self._new_fd_var(cell, dom)
        detail = {"variable": name, "domain": dom.to_json()}
        return self._event("newVariable", self._frame_info(frame), self._render(frame.goal), frame.pred, detail)

    def _do_awake(self) -> TraceEvent:
        cid = self.queue.pop(0)
        self.queue_set.discard(cid)
        self._log(SetQueue(tuple(self.queue)))
        con = self.store[cid]
        rev = fd.revise(con, self.fd_doms)
        for var, removed in rev.narrowings:
            self.staged.append(("narrow", var, removed, cid))
        if rev.entailed and rev.failed_var is None:
            self.staged.append(("entail", cid))
        frame = self.frames[-1] if self.frames else None
        info = self._frame_info(frame) if frame else (1, 1)
        goal = self._render(frame.goal) if frame else ""
        pred = frame.pred if frame else ""
        return self._event("awake", info, goal, pred, {"cid": cid, "constraint": con.text()})

    def _do_reduce(self) -> TraceEvent:
        _, name, removed, cid = self.staged.pop(0)
        self._narrow(name, removed)
        self._wake(name, cid)
        frame = self.frames[-1] if self.frames else None
        info = self._frame_info(frame) if frame else (1, 1)
        goal = self._render(frame.goal) if frame else ""
        pred = frame.pred if frame else ""
        detail = {"variable": name, "removed": removed.to_json(), "cid": cid}
        return self._event("reduce", info, goal, pred, detail)

    def _do_solver_fail(self) -> TraceEvent:
        _, name, removed, cid = self.staged.pop(0)
        old = self.fd_doms[name]
        self.trail.append(("dom", name, old))
        self.fd_doms[name] = Domain(())
        self._log(NarrowDomain(name, removed))
        self.staged.clear()
        if self.queue:
            self._set_queue([])
        self.failing = True
        frame = self.frames[-1] if self.frames else None
        info = self._frame_info(frame) if frame else (1, 1)
        goal = self._render(frame.goal) if frame else ""
        pred = frame.pred if frame else ""
        detail = {"variable": name, "cid": cid}
        return self._event("solverFail", info, goal, pred, detail)

    def _do_entail(self) -> TraceEvent:
        _, cid = self.staged.pop(0)
        con = self.store[cid]
        self._remove_constraint(cid)
        frame = self.frames[-1] if self.frames else None
        info = self._frame_info(frame) if frame else (1, 1)
        goal = self._render(frame.goal) if frame else ""
        pred = frame.pred if frame else ""
        return self._event("entail", info, goal, pred, {"cid": cid, "constraint": con.text()})


# ---------------------------------------------------------------------------
# Convenience driver
# ---------------------------------------------------------------------------


def run(
    program: Program,
    goal: Term,
    sink: Optional[TraceSink] = None,
    checkpoint_every: int = 1000,
    trace: bool = True,
    on_checkpoint: Optional[Callable[[FullState], None]] = None,
    max_events: Optional[int] = None,
) -> RunResult:
    """Run a goal to exhaustion, emitting the initial state then every event.

    ``on_checkpoint`` fires every ``checkpoint_every`` events with a fresh
    state copy (recovery points). A sink failure aborts the run cleanly.
    """
    top = deref(goal)
    if isinstance(top, (Atom, Struct)):
        key = indicator(top)
        first = key if not (isinstance(top, Struct) and top.functor == ",") else None
        if first is not None and first not in BUILTINS and first != "$call$/1" and not program.defines(first):
            raise EngineError("unknown predicate %s" % key)
    engine = Engine(program, goal, trace=trace)
    if sink is not None:
        sink.on_snapshot(engine.snapshot())
    count = 0
    while not engine.is_terminal():
        event = engine.step()
        count += 1
        if sink is not None:
            sink.on_event(event)
        if on_checkpoint is not None and checkpoint_every > 0 and count % checkpoint_every == 0:
            on_checkpoint(engine.snapshot())
        if max_events is not None and count >= max_events:
            break
    return RunResult(engine.solutions, engine.chrono, count, len(engine.search))
