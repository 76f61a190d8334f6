"""Trace data model: events, full states, state deltas, and the line codec.

Everything in this module is a plain value. Events and states serialize to
single-line JSON (the ``nd-text`` format used on the wire and in dump files);
deltas are ordered op lists that rebuild a successor state from its
predecessor. ``apply_delta`` / ``diff_states`` are exact inverses, which is
what lets an analyzer mirror the engine state from an incremental stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Optional, Sequence, Union


class DeltaInconsistent(Exception):
    """A delta op referenced a node/variable/constraint the state lacks.

    Raised when replaying a corrupted or filtered (gappy) stream; the caller
    is expected to resynchronize from a snapshot.
    """


class DecodeError(Exception):
    """Malformed event or snapshot line. Carries the byte offset when known."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


# ---------------------------------------------------------------------------
# Finite integer domains
# ---------------------------------------------------------------------------


class Domain:
    """Finite integer set stored as sorted, disjoint, inclusive ranges.

    Immutable. The range representation keeps interval-heavy domains (the
    common case) compact while still allowing holes from disequality
    propagation.
    """

    __slots__ = ("ranges",)

    def __init__(self, ranges: Iterable[Sequence[int]] = ()):
        self.ranges: tuple[tuple[int, int], ...] = _normalize(ranges)

    @classmethod
    def from_bounds(cls, lo: int, hi: int) -> "Domain":
        return cls(((lo, hi),)) if lo <= hi else cls(())

    @classmethod
    def from_values(cls, values: Iterable[int]) -> "Domain":
        return cls((v, v) for v in values)

    def is_empty(self) -> bool:
        return not self.ranges

    def is_singleton(self) -> bool:
        return len(self.ranges) == 1 and self.ranges[0][0] == self.ranges[0][1]

    @property
    def min(self) -> int:
        return self.ranges[0][0]

    @property
    def max(self) -> int:
        return self.ranges[-1][1]

    @property
    def value(self) -> int:
        """The single element of a singleton domain."""
        if not self.is_singleton():
            raise ValueError("domain is not a singleton: %r" % (self,))
        return self.ranges[0][0]

    def size(self) -> int:
        return sum(hi - lo + 1 for lo, hi in self.ranges)

    def __contains__(self, v: int) -> bool:
        return any(lo <= v <= hi for lo, hi in self.ranges)

    def values(self) -> Iterator[int]:
        for lo, hi in self.ranges:
            yield from range(lo, hi + 1)

    def remove_value(self, v: int) -> "Domain":
        return self.subtract(Domain.from_values([v]))

    def remove_above(self, k: int) -> "Domain":
        """Keep only values <= k."""
        kept = []
        for lo, hi in self.ranges:
            if lo > k:
                break
            kept.append((lo, min(hi, k)))
        return Domain(kept)

    def remove_below(self, k: int) -> "Domain":
        """Keep only values >= k."""
        kept = []
        for lo, hi in self.ranges:
            if hi < k:
                continue
            kept.append((max(lo, k), hi))
        return Domain(kept)

    def intersect(self, other: "Domain") -> "Domain":
        out = []
        for alo, ahi in self.ranges:
            for blo, bhi in other.ranges:
                lo, hi = max(alo, blo), min(ahi, bhi)
                if lo <= hi:
                    out.append((lo, hi))
        return Domain(out)

    def subtract(self, other: "Domain") -> "Domain":
        out = []
        for lo, hi in self.ranges:
            pieces = [(lo, hi)]
            for blo, bhi in other.ranges:
                nxt = []
                for plo, phi in pieces:
                    if bhi < plo or blo > phi:
                        nxt.append((plo, phi))
                        continue
                    if plo < blo:
                        nxt.append((plo, blo - 1))
                    if phi > bhi:
                        nxt.append((bhi + 1, phi))
                pieces = nxt
            out.extend(pieces)
        return Domain(out)

    def to_json(self) -> list[list[int]]:
        return [[lo, hi] for lo, hi in self.ranges]

    @classmethod
    def from_json(cls, data: Any) -> "Domain":
        if not isinstance(data, list):
            raise DecodeError("domain must be a list of ranges")
        return cls(tuple((int(r[0]), int(r[1])) for r in data))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Domain) and self.ranges == other.ranges

    def __hash__(self) -> int:
        return hash(self.ranges)

    def __repr__(self) -> str:
        return "Domain(%s)" % (list(self.ranges),)

    def __deepcopy__(self, memo: dict) -> "Domain":
        return self


def _normalize(ranges: Iterable[Sequence[int]]) -> tuple[tuple[int, int], ...]:
    rs = sorted((int(lo), int(hi)) for lo, hi in ranges if lo <= hi)
    merged: list[tuple[int, int]] = []
    for lo, hi in rs:
        if merged and lo <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return tuple(merged)


# ---------------------------------------------------------------------------
# Delta ops
# ---------------------------------------------------------------------------

PROOF = "proof"
SEARCH = "search"


@dataclass(frozen=True)
class PushGoal:
    goal: str


@dataclass(frozen=True)
class PopGoal:
    pass


@dataclass(frozen=True)
class AddProofNode:
    parent: Optional[int]
    node: int
    goal: str


@dataclass(frozen=True)
class SetNodeStatus:
    # tree selects which node table the id lives in; proof statuses are the
    # strings open/proved/failed, search statuses are untried-alternative counts.
    tree: str
    node: int
    status: Union[str, int]


@dataclass(frozen=True)
class AddSearchNode:
    parent: Optional[int]
    node: int
    kind: str  # "and" | "choicePoint"


@dataclass(frozen=True)
class SetCurrentNode:
    node: int


@dataclass(frozen=True)
class SetDomain:
    var: str
    domain: Domain


@dataclass(frozen=True)
class NarrowDomain:
    var: str
    removed: Domain


@dataclass(frozen=True)
class AddConstraint:
    cid: int
    text: str


@dataclass(frozen=True)
class RemoveConstraint:
    cid: int


@dataclass(frozen=True)
class SetQueue:
    ids: tuple[int, ...]


@dataclass(frozen=True)
class IncrSolutions:
    pass


DeltaOp = Union[
    PushGoal,
    PopGoal,
    AddProofNode,
    SetNodeStatus,
    AddSearchNode,
    SetCurrentNode,
    SetDomain,
    NarrowDomain,
    AddConstraint,
    RemoveConstraint,
    SetQueue,
    IncrSolutions,
]


@dataclass(frozen=True)
class StateDelta:
    """Ordered ops turning one full state into the next."""

    ops: tuple[DeltaOp, ...] = ()

    def __iter__(self) -> Iterator[DeltaOp]:
        return iter(self.ops)

    def __len__(self) -> int:
        return len(self.ops)


# ---------------------------------------------------------------------------
# Ports and events
# ---------------------------------------------------------------------------

BYRD_PORTS = ("call", "exit", "fail", "redo", "exception")
SOLVER_PORTS = (
    "newVariable",
    "post",
    "reduce",
    "awake",
    "entail",
    "solverFail",
    "choicePoint",
    "backTo",
    "label",
    "solution",
)
ALL_PORTS = BYRD_PORTS + SOLVER_PORTS

FAILURE_PORTS = frozenset({"fail", "exception", "solverFail"})

#: Attribute selectors an analyzer may request. chrono and port always travel
#: with an event; the rest are computed/attached only when asked for.
ATTR_SELECTORS = ("port", "chrono", "depths", "goal", "pred", "detail", "domains", "delta")


@dataclass(frozen=True)
class ActionLabel:
    """What a trace event did: a port plus its port-specific payload."""

    port: str
    detail: dict = field(default_factory=dict)


@dataclass
class TraceEvent:
    """One emitted trace event.

    ``attrs`` holds the attribute map (JSON-shaped values only). ``delta``
    is the incremental payload; a virtual-full-trace event would instead
    inline the whole parameter vector under ``attrs["state"]``. The chrono
    doubles as the event identifier: the stream is emitted in chrono order
    and one event per tick, so no separate id travels on the wire.
    """

    chrono: int
    port: str
    attrs: dict = field(default_factory=dict)
    delta: Optional[StateDelta] = None
    tags: tuple[str, ...] = ()

    @property
    def event_id(self) -> int:
        return self.chrono

    @property
    def action(self) -> ActionLabel:
        return ActionLabel(self.port, self.attrs.get("detail", {}))


# ---------------------------------------------------------------------------
# Full state
# ---------------------------------------------------------------------------


@dataclass
class ProofNode:
    parent: Optional[int]
    goal: str
    status: str  # open | proved | failed
    depth: int


@dataclass
class SearchNode:
    parent: Optional[int]
    kind: str  # and | choicePoint
    untried: int = 0


@dataclass
class FullState:
    """The observable parameter vector of the engine at one chrono.

    This is the state an analyzer can mirror: resolution bookkeeping (goal
    stack, proof tree), search structure, and the solver store. Engine
    internals that are derivable or invisible (variable bindings, the trail)
    are deliberately not part of it.
    """

    chrono: int = 0
    goal_stack: list[str] = field(default_factory=list)
    proof_nodes: dict[int, ProofNode] = field(default_factory=dict)
    search_nodes: dict[int, SearchNode] = field(default_factory=dict)
    current_node: int = 0
    fd_vars: dict[str, Domain] = field(default_factory=dict)
    constraint_store: dict[int, str] = field(default_factory=dict)
    propagation_queue: list[int] = field(default_factory=list)
    solutions: int = 0

    def copy(self) -> "FullState":
        return FullState(
            chrono=self.chrono,
            goal_stack=list(self.goal_stack),
            proof_nodes={k: ProofNode(n.parent, n.goal, n.status, n.depth) for k, n in self.proof_nodes.items()},
            search_nodes={k: SearchNode(n.parent, n.kind, n.untried) for k, n in self.search_nodes.items()},
            current_node=self.current_node,
            fd_vars=dict(self.fd_vars),
            constraint_store=dict(self.constraint_store),
            propagation_queue=list(self.propagation_queue),
            solutions=self.solutions,
        )

    def to_json(self) -> dict:
        return {
            "chrono": self.chrono,
            "goal_stack": list(self.goal_stack),
            "proof_tree": {
                str(k): {"parent": n.parent, "goal": n.goal, "status": n.status, "depth": n.depth}
                for k, n in sorted(self.proof_nodes.items())
            },
            "search_tree": {
                str(k): {"parent": n.parent, "kind": n.kind, "untried": n.untried}
                for k, n in sorted(self.search_nodes.items())
            },
            "current_node": self.current_node,
            "fd_vars": {v: d.to_json() for v, d in sorted(self.fd_vars.items())},
            "constraint_store": {str(k): t for k, t in sorted(self.constraint_store.items())},
            "propagation_queue": list(self.propagation_queue),
            "solutions": self.solutions,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FullState":
        try:
            return cls(
                chrono=int(data["chrono"]),
                goal_stack=list(data["goal_stack"]),
                proof_nodes={
                    int(k): ProofNode(v["parent"], v["goal"], v["status"], v["depth"])
                    for k, v in data["proof_tree"].items()
                },
                search_nodes={
                    int(k): SearchNode(v["parent"], v["kind"], v["untried"])
                    for k, v in data["search_tree"].items()
                },
                current_node=int(data["current_node"]),
                fd_vars={v: Domain.from_json(d) for v, d in data["fd_vars"].items()},
                constraint_store={int(k): t for k, t in data["constraint_store"].items()},
                propagation_queue=[int(i) for i in data["propagation_queue"]],
                solutions=int(data["solutions"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DecodeError("bad state object: %s" % exc) from exc

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FullState):
            return NotImplemented
        return self.to_json() == other.to_json()


# ---------------------------------------------------------------------------
# Trace validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    index: Optional[int] = None
    reason: Optional[str] = None


def validate_trace(events: Sequence[TraceEvent], continuous: bool) -> ValidationResult:
    """Check id uniqueness and chrono monotonicity of a finite trace.

    In continuous mode the chrono must advance by exactly one per event;
    otherwise holes are fine (a filtered per-subscription stream). Violations
    are returned as values, with the index of the first offending event.
    """
    seen: set[int] = set()
    prev: Optional[int] = None
    for i, ev in enumerate(events):
        if ev.event_id in seen:
            return ValidationResult(False, i, "duplicate event id %d" % ev.event_id)
        seen.add(ev.event_id)
        if ev.chrono < 0:
            return ValidationResult(False, i, "negative chrono")
        if prev is not None:
            if ev.chrono <= prev:
                return ValidationResult(False, i, "chrono not increasing (%d -> %d)" % (prev, ev.chrono))
            if continuous and ev.chrono != prev + 1:
                return ValidationResult(False, i, "chrono hole in continuous trace (%d -> %d)" % (prev, ev.chrono))
        prev = ev.chrono
    return ValidationResult(True)


# ---------------------------------------------------------------------------
# Delta application and diffing
# ---------------------------------------------------------------------------


def apply_delta(state: FullState, event: TraceEvent) -> FullState:
    """Return the successor state: ``state`` with the event's ops applied.

    The input state is not mutated. Raises DeltaInconsistent when an op
    references something missing, which on a filtered stream means the
    mirror went stale.
    """
    if event.delta is None:
        raise DeltaInconsistent("event %d carries no delta" % event.chrono)
    if event.chrono <= state.chrono:
        raise DeltaInconsistent(
            "event chrono %d not ahead of state chrono %d" % (event.chrono, state.chrono)
        )
    new = state.copy()
    apply_ops_inplace(new, event.delta)
    new.chrono = event.chrono
    return new


def apply_ops_inplace(state: FullState, delta: Iterable[DeltaOp]) -> None:
    """Apply ops to ``state`` directly. Shared by apply_delta and mirrors."""
    for op in delta:
        if isinstance(op, PushGoal):
            state.goal_stack.append(op.goal)
        elif isinstance(op, PopGoal):
            if not state.goal_stack:
                raise DeltaInconsistent("pop on empty goal stack")
            state.goal_stack.pop()
        elif isinstance(op, AddProofNode):
            if op.node in state.proof_nodes:
                raise DeltaInconsistent("proof node %d already exists" % op.node)
            if op.parent is None:
                depth = 1
            else:
                parent = state.proof_nodes.get(op.parent)
                if parent is None:
                    raise DeltaInconsistent("proof parent %d missing" % op.parent)
                depth = parent.depth + 1
            state.proof_nodes[op.node] = ProofNode(op.parent, op.goal, "open", depth)
        elif isinstance(op, SetNodeStatus):
            if op.tree == PROOF:
                node = state.proof_nodes.get(op.node)
            elif op.tree == SEARCH:
                node = state.search_nodes.get(op.node)
            else:
                raise DeltaInconsistent("unknown tree %r" % op.tree)
            if node is None:
                raise DeltaInconsistent("%s node %d missing" % (op.tree, op.node))
            if isinstance(node, ProofNode):
                node.status = str(op.status)
            else:
                node.untried = int(op.status)
        elif isinstance(op, AddSearchNode):
            if op.node in state.search_nodes:
                raise DeltaInconsistent("search node %d already exists" % op.node)
            if op.parent is not None and op.parent not in state.search_nodes:
                raise DeltaInconsistent("search parent %d missing" % op.parent)
            state.search_nodes[op.node] = SearchNode(op.parent, op.kind)
        elif isinstance(op, SetCurrentNode):
            if op.node not in state.search_nodes:
                raise DeltaInconsistent("current node %d missing" % op.node)
            state.current_node = op.node
        elif isinstance(op, SetDomain):
            state.fd_vars[op.var] = op.domain
        elif isinstance(op, NarrowDomain):
            dom = state.fd_vars.get(op.var)
            if dom is None:
                raise DeltaInconsistent("variable %s missing" % op.var)
            if not op.removed.subtract(dom).is_empty():
                raise DeltaInconsistent("narrowing %s removes absent values" % op.var)
            state.fd_vars[op.var] = dom.subtract(op.removed)
        elif isinstance(op, AddConstraint):
            if op.cid in state.constraint_store:
                raise DeltaInconsistent("constraint %d already exists" % op.cid)
            state.constraint_store[op.cid] = op.text
        elif isinstance(op, RemoveConstraint):
            if op.cid not in state.constraint_store:
                raise DeltaInconsistent("constraint %d missing" % op.cid)
            del state.constraint_store[op.cid]
        elif isinstance(op, SetQueue):
            state.propagation_queue = list(op.ids)
        elif isinstance(op, IncrSolutions):
            state.solutions += 1
        else:
            raise DeltaInconsistent("unknown op %r" % (op,))


def diff_states(before: FullState, after: FullState) -> StateDelta:
    """Compute a delta such that applying it to ``before`` yields ``after``.

    Structural: compares the two parameter vectors field by field. The
    engine produces its per-event deltas directly from its own mutations,
    but must always agree with this function (property-tested).
    """
    if before.chrono >= after.chrono:
        raise ValueError("diff requires before.chrono < after.chrono")
    ops: list[DeltaOp] = []

    # Goal stack: pop the divergent suffix, push the replacement.
    common = 0
    for a, b in zip(before.goal_stack, after.goal_stack):
        if a != b:
            break
        common += 1
    ops.extend(PopGoal() for _ in range(len(before.goal_stack) - common))
    ops.extend(PushGoal(g) for g in after.goal_stack[common:])

    # Trees only grow; statuses may move either way.
    for nid in sorted(after.proof_nodes.keys() - before.proof_nodes.keys()):
        n = after.proof_nodes[nid]
        ops.append(AddProofNode(n.parent, nid, n.goal))
        if n.status != "open":
            ops.append(SetNodeStatus(PROOF, nid, n.status))
    for nid, n in sorted(before.proof_nodes.items()):
        m = after.proof_nodes.get(nid)
        if m is None:
            raise ValueError("proof node %d vanished; trees are add-only" % nid)
        if m.status != n.status:
            ops.append(SetNodeStatus(PROOF, nid, m.status))

    for nid in sorted(after.search_nodes.keys() - before.search_nodes.keys()):
        n = after.search_nodes[nid]
        ops.append(AddSearchNode(n.parent, nid, n.kind))
        if n.untried:
            ops.append(SetNodeStatus(SEARCH, nid, n.untried))
    for nid, n in sorted(before.search_nodes.items()):
        m = after.search_nodes.get(nid)
        if m is None:
            raise ValueError("search node %d vanished; trees are add-only" % nid)
        if m.untried != n.untried:
            ops.append(SetNodeStatus(SEARCH, nid, m.untried))

    if after.current_node != before.current_node:
        ops.append(SetCurrentNode(after.current_node))

    for var in sorted(after.fd_vars.keys() - before.fd_vars.keys()):
        ops.append(SetDomain(var, after.fd_vars[var]))
    for var, dom in sorted(before.fd_vars.items()):
        new = after.fd_vars.get(var)
        if new is None:
            raise ValueError("fd variable %s vanished; the store is add-only" % var)
        if new != dom:
            removed = dom.subtract(new)
            if new.subtract(dom).is_empty():
                ops.append(NarrowDomain(var, removed))
            else:
                ops.append(SetDomain(var, new))

    for cid in sorted(before.constraint_store.keys() - after.constraint_store.keys()):
        ops.append(RemoveConstraint(cid))
    for cid in sorted(after.constraint_store.keys() - before.constraint_store.keys()):
        ops.append(AddConstraint(cid, after.constraint_store[cid]))

    if after.propagation_queue != before.propagation_queue:
        ops.append(SetQueue(tuple(after.propagation_queue)))

    if after.solutions < before.solutions:
        raise ValueError("solution count decreased")
    ops.extend(IncrSolutions() for _ in range(after.solutions - before.solutions))

    return StateDelta(tuple(ops))


# ---------------------------------------------------------------------------
# nd-text codec
# ---------------------------------------------------------------------------

_OP_TAGS = {
    PushGoal: "push_goal",
    PopGoal: "pop_goal",
    AddProofNode: "add_proof_node",
    SetNodeStatus: "set_node_status",
    AddSearchNode: "add_search_node",
    SetCurrentNode: "set_current_node",
    SetDomain: "set_domain",
    NarrowDomain: "narrow_domain",
    AddConstraint: "add_constraint",
    RemoveConstraint: "remove_constraint",
    SetQueue: "set_queue",
    IncrSolutions: "incr_solutions",
}


def op_to_json(op: DeltaOp) -> dict:
    tag = _OP_TAGS[type(op)]
    if isinstance(op, PushGoal):
        return {"op": tag, "goal": op.goal}
    if isinstance(op, PopGoal):
        return {"op": tag}
    if isinstance(op, AddProofNode):
        return {"op": tag, "parent": op.parent, "node": op.node, "goal": op.goal}
    if isinstance(op, SetNodeStatus):
        return {"op": tag, "tree": op.tree, "node": op.node, "status": op.status}
    if isinstance(op, AddSearchNode):
        return {"op": tag, "parent": op.parent, "node": op.node, "kind": op.kind}
    if isinstance(op, SetCurrentNode):
        return {"op": tag, "node": op.node}
    if isinstance(op, SetDomain):
        return {"op": tag, "var": op.var, "domain": op.domain.to_json()}
    if isinstance(op, NarrowDomain):
        return {"op": tag, "var": op.var, "removed": op.removed.to_json()}
    if isinstance(op, AddConstraint):
        return {"op": tag, "cid": op.cid, "text": op.text}
    if isinstance(op, RemoveConstraint):
        return {"op": tag, "cid": op.cid}
    if isinstance(op, SetQueue):
        return {"op": tag, "ids": list(op.ids)}
    if isinstance(op, IncrSolutions):
        return {"op": tag}
    raise TypeError("unknown op %r" % (op,))


def op_from_json(data: dict) -> DeltaOp:
    try:
        tag = data["op"]
        if tag == "push_goal":
            return PushGoal(data["goal"])
        if tag == "pop_goal":
            return PopGoal()
        if tag == "add_proof_node":
            return AddProofNode(data["parent"], int(data["node"]), data["goal"])
        if tag == "set_node_status":
            status = data["status"]
            return SetNodeStatus(data["tree"], int(data["node"]), status)
        if tag == "add_search_node":
            return AddSearchNode(data["parent"], int(data["node"]), data["kind"])
        if tag == "set_current_node":
            return SetCurrentNode(int(data["node"]))
        if tag == "set_domain":
            return SetDomain(data["var"], Domain.from_json(data["domain"]))
        if tag == "narrow_domain":
            return NarrowDomain(data["var"], Domain.from_json(data["removed"]))
        if tag == "add_constraint":
            return AddConstraint(int(data["cid"]), data["text"])
        if tag == "remove_constraint":
            return RemoveConstraint(int(data["cid"]))
        if tag == "set_queue":
            return SetQueue(tuple(int(i) for i in data["ids"]))
        if tag == "incr_solutions":
            return IncrSolutions()
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError("bad delta op: %s" % exc) from exc
    raise DecodeError("unknown delta op %r" % (data.get("op"),))


def event_to_json(event: TraceEvent) -> dict:
    msg: dict[str, Any] = {
        "type": "event",
        "chrono": event.chrono,
        "tags": list(event.tags),
        "port": event.port,
        "attrs": event.attrs,
    }
    if event.delta is not None:
        msg["delta"] = [op_to_json(op) for op in event.delta]
    return msg


def event_from_json(data: dict) -> TraceEvent:
    try:
        delta = None
        if "delta" in data:
            delta = StateDelta(tuple(op_from_json(op) for op in data["delta"]))
        return TraceEvent(
            chrono=int(data["chrono"]),
            port=str(data["port"]),
            attrs=dict(data["attrs"]),
            delta=delta,
            tags=tuple(str(t) for t in data["tags"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError("bad event object: %s" % exc) from exc


def encode_event(event: TraceEvent, format: str = "nd-text") -> bytes:
    """Encode an event as one UTF-8 line (trailing newline included)."""
    if format != "nd-text":
        raise ValueError("unknown format %r" % format)
    return (json.dumps(event_to_json(event), separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


def decode_event(line: bytes) -> TraceEvent:
    """Inverse of encode_event. Raises DecodeError with a byte offset."""
    try:
        data = json.loads(line.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DecodeError("invalid UTF-8: %s" % exc, offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        raise DecodeError("invalid JSON: %s" % exc.msg, offset=exc.pos) from exc
    if not isinstance(data, dict) or data.get("type") != "event":
        raise DecodeError("not an event line")
    return event_from_json(data)
