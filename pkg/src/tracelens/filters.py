"""Analyzer subscription filters and the union matcher.

A filter is either a single-event pattern (a conjunction of atomic
predicates over port/pred/depth/chrono/variable) or a sequence pattern: a
regular expression over such conjunctions. Each filter compiles to a small
nondeterministic automaton; the driver runs all subscriptions as one merged,
tagged machine whose first pass dispatches on the event's port, so events
that no filter could possibly match cost almost nothing.

Matching semantics: sequence patterns match contiguous event subsequences
starting anywhere; a match is reported at its final event, and a match must
consume at least one event. Overlapping matches are all reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .trace_model import ALL_PORTS, ATTR_SELECTORS, TraceEvent


class FilterParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__("%s at line %d, column %d" % (message, line, col))
        self.line = line
        self.col = col


class DuplicateId(Exception):
    pass


DEFAULT_ATTRS = ("depths", "goal")


# ---------------------------------------------------------------------------
# Patterns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtomPred:
    """One atomic predicate. Total and side-effect free over events."""

    field: str  # port | pred | depth | chrono | variable
    op: str  # "=" | "in" | "<" | "<=" | ">" | ">="
    value: object

    def test(self, event: TraceEvent) -> bool:
        if self.field == "port":
            if self.op == "in":
                return event.port in self.value
            return event.port == self.value
        if self.field == "pred":
            return event.attrs.get("pred") == self.value
        if self.field == "variable":
            detail = event.attrs.get("detail") or {}
            return detail.get("variable") == self.value
        if self.field == "depth":
            depths = event.attrs.get("depths")
            if not depths:
                return False
            actual = depths[1]
        else:  # chrono
            actual = event.chrono
        if self.op == "=":
            return actual == self.value
        if self.op == "<":
            return actual < self.value
        if self.op == "<=":
            return actual <= self.value
        if self.op == ">":
            return actual > self.value
        if self.op == ">=":
            return actual >= self.value
        raise AssertionError(self.op)

    def ports(self) -> Optional[frozenset]:
        if self.field != "port":
            return None
        return frozenset(self.value) if self.op == "in" else frozenset((self.value,))


EventPattern = tuple[AtomPred, ...]


@dataclass(frozen=True)
class SeqLeaf:
    pattern: EventPattern


@dataclass(frozen=True)
class SeqCat:
    parts: tuple


@dataclass(frozen=True)
class SeqAlt:
    options: tuple


@dataclass(frozen=True)
class SeqStar:
    inner: object


SeqPattern = Union[SeqLeaf, SeqCat, SeqAlt, SeqStar]


@dataclass(frozen=True)
class FilterSpec:
    id: str
    pattern: SeqPattern  # single-event patterns are a one-leaf sequence
    wanted_attrs: tuple[str, ...] = DEFAULT_ATTRS
    is_sequence: bool = False


def pattern_ports(pattern: EventPattern) -> Optional[frozenset]:
    """Intersection of the pattern's port constraints, or None for any-port."""
    out: Optional[frozenset] = None
    for atom in pattern:
        p = atom.ports()
        if p is not None:
            out = p if out is None else (out & p)
    return out


def eval_pattern(pattern: EventPattern, event: TraceEvent, counter: "MatchCounters") -> bool:
    for atom in pattern:
        counter.predicate_evaluations += 1
        if not atom.test(event):
            return False
    return True


# ---------------------------------------------------------------------------
# Filter-language parser
# ---------------------------------------------------------------------------

_PUNCT = "{}(),;|*"
_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_$")
_IDENT_REST = _IDENT_START | set("0123456789")


@dataclass(frozen=True)
class _Tok:
    kind: str  # ident int op punct eof
    text: str
    line: int
    col: int


def _lex(source: str) -> list[_Tok]:
    toks = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        c = source[i]
        if c == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        ln, cl = line, col
        if c in _PUNCT:
            toks.append(_Tok("punct", c, ln, cl))
            i += 1
            col += 1
            continue
        if c in "<>=":
            two = source[i : i + 2]
            if two in ("<=", ">="):
                toks.append(_Tok("op", two, ln, cl))
                i += 2
                col += 2
            else:
                toks.append(_Tok("op", c, ln, cl))
                i += 1
                col += 1
            continue
        if c == "/":
            toks.append(_Tok("op", "/", ln, cl))
            i += 1
            col += 1
            continue
        if c.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            toks.append(_Tok("int", source[i:j], ln, cl))
            col += j - i
            i = j
            continue
        if c in _IDENT_START:
            j = i
            while j < n and source[j] in _IDENT_REST:
                j += 1
            toks.append(_Tok("ident", source[i:j], ln, cl))
            col += j - i
            i = j
            continue
        raise FilterParseError("unexpected character %r" % c, ln, cl)
    toks.append(_Tok("eof", "", line, col))
    return toks


class _FilterParser:
    def __init__(self, source: str):
        self.toks = _lex(source)
        self.pos = 0

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def next(self) -> _Tok:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind: str, text: Optional[str] = None) -> _Tok:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            raise FilterParseError(
                "expected %s, found %r" % (text or kind, t.text or "<eof>"), t.line, t.col
            )
        return self.next()

    def filters(self) -> list[FilterSpec]:
        specs = []
        while self.peek().kind != "eof":
            specs.append(self.filter())
        return specs

    def filter(self) -> FilterSpec:
        self.expect("ident", "filter")
        fid = self.expect("ident").text
        self.expect("punct", "{")
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "when":
            self.next()
            pattern: SeqPattern = SeqLeaf(self.conjunction())
            is_seq = False
        elif tok.kind == "ident" and tok.text == "seq":
            self.next()
            pattern = self.seq_alt()
            is_seq = True
        else:
            raise FilterParseError("expected 'when' or 'seq'", tok.line, tok.col)
        attrs = DEFAULT_ATTRS
        if self.peek().kind == "ident" and self.peek().text == "attrs":
            self.next()
            attrs = self.attr_list()
        self.expect("punct", "}")
        return FilterSpec(fid, pattern, attrs, is_seq)

    def attr_list(self) -> tuple[str, ...]:
        names = [self.attr_name()]
        while self.peek().kind == "punct" and self.peek().text == ",":
            self.next()
            names.append(self.attr_name())
        return tuple(dict.fromkeys(names))

    def attr_name(self) -> str:
        tok = self.expect("ident")
        if tok.text not in ATTR_SELECTORS:
            raise FilterParseError("unknown attribute %r" % tok.text, tok.line, tok.col)
        return tok.text

    # sequences --------------------------------------------------------

    def seq_alt(self) -> SeqPattern:
        parts = [self.seq_cat()]
        while self.peek().kind == "punct" and self.peek().text == "|":
            self.next()
            parts.append(self.seq_cat())
        return parts[0] if len(parts) == 1 else SeqAlt(tuple(parts))

    def seq_cat(self) -> SeqPattern:
        parts = [self.seq_rep()]
        while self.peek().kind == "punct" and self.peek().text == ";":
            self.next()
            parts.append(self.seq_rep())
        return parts[0] if len(parts) == 1 else SeqCat(tuple(parts))

    def seq_rep(self) -> SeqPattern:
        base = self.seq_base()
        while self.peek().kind == "punct" and self.peek().text == "*":
            self.next()
            base = SeqStar(base)
        return base

    def seq_base(self) -> SeqPattern:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "(":
            self.next()
            inner = self.seq_alt()
            self.expect("punct", ")")
            return inner
        return SeqLeaf(self.conjunction())

    # conjunctions -----------------------------------------------------

    def conjunction(self) -> EventPattern:
        atoms = [self.atom()]
        while self.peek().kind == "ident" and self.peek().text == "and":
            self.next()
            atoms.append(self.atom())
        return tuple(atoms)

    def atom(self) -> AtomPred:
        tok = self.expect("ident")
        f = tok.text
        if f == "port":
            op = self.peek()
            if op.kind == "ident" and op.text == "in":
                self.next()
                self.expect("punct", "(")
                ports = [self.port_name()]
                while self.peek().kind == "punct" and self.peek().text == ",":
                    self.next()
                    ports.append(self.port_name())
                self.expect("punct", ")")
                return AtomPred("port", "in", frozenset(ports))
            self.expect("op", "=")
            return AtomPred("port", "=", self.port_name())
        if f == "pred":
            self.expect("op", "=")
            name = self.expect("ident").text
            self.expect("op", "/")
            arity = int(self.expect("int").text)
            return AtomPred("pred", "=", "%s/%d" % (name, arity))
        if f == "variable":
            self.expect("op", "=")
            return AtomPred("variable", "=", self.expect("ident").text)
        if f in ("depth", "chrono"):
            op = self.expect("op").text
            if op not in ("=", "<", "<=", ">", ">="):
                raise FilterParseError("bad comparison %r" % op, tok.line, tok.col)
            value = int(self.expect("int").text)
            return AtomPred(f, op, value)
        raise FilterParseError("unknown predicate field %r" % f, tok.line, tok.col)

    def port_name(self) -> str:
        tok = self.expect("ident")
        if tok.text not in ALL_PORTS:
            raise FilterParseError("unknown port %r" % tok.text, tok.line, tok.col)
        return tok.text


def parse_filter(source: str) -> FilterSpec:
    """Parse exactly one ``filter id { ... }`` block."""
    parser = _FilterParser(source)
    spec = parser.filter()
    tok = parser.peek()
    if tok.kind != "eof":
        raise FilterParseError("trailing input %r" % tok.text, tok.line, tok.col)
    return spec


def parse_filters(source: str) -> list[FilterSpec]:
    """Parse a filter file: one or more blocks."""
    return _FilterParser(source).filters()


# ---------------------------------------------------------------------------
# Thompson construction
# ---------------------------------------------------------------------------


@dataclass
class Nfa:
    start: int
    accepts: frozenset
    transitions: list[tuple[int, EventPattern, int]]
    eps: dict[int, list[int]]
    n_states: int


class _Builder:
    def __init__(self):
        self.n = 0
        self.transitions: list[tuple[int, EventPattern, int]] = []
        self.eps: dict[int, list[int]] = {}

    def state(self) -> int:
        s = self.n
        self.n += 1
        return s

    def edge(self, a: int, pattern: EventPattern, b: int) -> None:
        self.transitions.append((a, pattern, b))

    def eeps(self, a: int, b: int) -> None:
        self.eps.setdefault(a, []).append(b)

    def build(self, node: SeqPattern) -> tuple[int, int]:
        if isinstance(node, SeqLeaf):
            a, b = self.state(), self.state()
            self.edge(a, node.pattern, b)
            return a, b
        if isinstance(node, SeqCat):
            first, last = None, None
            for part in node.parts:
                a, b = self.build(part)
                if first is None:
                    first = a
                else:
                    self.eeps(last, a)
                last = b
            return first, last
        if isinstance(node, SeqAlt):
            a, b = self.state(), self.state()
            for opt in node.options:
                s, t = self.build(opt)
                self.eeps(a, s)
                self.eeps(t, b)
            return a, b
        if isinstance(node, SeqStar):
            a, b = self.state(), self.state()
            s, t = self.build(node.inner)
            self.eeps(a, s)
            self.eeps(a, b)
            self.eeps(t, s)
            self.eeps(t, b)
            return a, b
        raise TypeError(node)


def compile(spec: FilterSpec) -> Nfa:  # noqa: A001 - the operation's natural name
    """Compile a filter to its recognizer automaton."""
    builder = _Builder()
    start, accept = builder.build(spec.pattern)
    return Nfa(start, frozenset((accept,)), builder.transitions, builder.eps, builder.n)


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


@dataclass
class MatchCounters:
    predicate_evaluations: int = 0
    events_seen: int = 0

    def copy(self) -> "MatchCounters":
        return MatchCounters(self.predicate_evaluations, self.events_seen)


class _Machine:
    """One compiled filter plus its live run state."""

    __slots__ = ("fid", "nfa", "closure", "out", "current", "start_closure")

    def __init__(self, fid: str, nfa: Nfa):
        self.fid = fid
        self.nfa = nfa
        self.closure = _closures(nfa)
        self.out: dict[int, list[tuple[EventPattern, Optional[frozenset], int]]] = {}
        for src, pattern, dst in nfa.transitions:
            self.out.setdefault(src, []).append((pattern, pattern_ports(pattern), dst))
        self.start_closure = self.closure[nfa.start]
        self.current: frozenset = frozenset()

    def start_transitions(self):
        for s in sorted(self.start_closure):
            for item in self.out.get(s, ()):
                yield s, item

    def step(self, event: TraceEvent, counters: MatchCounters, dispatch: bool, from_start: bool = True) -> bool:
        """Advance on one event; True when an accepting state is reached."""
        targets: set[int] = set()
        frontier = self.current | self.start_closure if from_start else self.current
        for s in frontier:
            for pattern, ports, dst in self.out.get(s, ()):
                if dispatch and ports is not None and event.port not in ports:
                    continue
                if eval_pattern(pattern, event, counters):
                    targets.add(dst)
        new: set[int] = set()
        for t in targets:
            new |= self.closure[t]
        self.current = frozenset(new)
        return any(s in self.nfa.accepts for s in self.current)


def _closures(nfa: Nfa) -> dict[int, frozenset]:
    closures: dict[int, frozenset] = {}
    for s in range(nfa.n_states):
        seen = {s}
        stack = [s]
        while stack:
            u = stack.pop()
            for v in nfa.eps.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        closures[s] = frozenset(seen)
    return closures


class MergedMatcher:
    """All subscriptions as one tagged machine.

    ``dispatch=True`` enables the port-first pass: an event only reaches a
    machine when the port index admits one of its start transitions or the
    machine has live sequence threads. ``dispatch=False`` is the naive
    baseline (every filter fully evaluated on every event) used both as the
    correctness oracle and as the sequential-filtering cost model.
    """

    def __init__(self, specs: Iterable[FilterSpec] = (), dispatch: bool = True):
        self.dispatch = dispatch
        self.machines: dict[str, _Machine] = {}
        self.specs: dict[str, FilterSpec] = {}
        self.counters = MatchCounters()
        self._port_index: dict[str, list[str]] = {}
        self._any_port: list[str] = []
        for spec in specs:
            self.add(spec)

    def add(self, spec: FilterSpec) -> None:
        if spec.id in self.machines:
            raise DuplicateId(spec.id)
        self.specs[spec.id] = spec
        self.machines[spec.id] = _Machine(spec.id, compile(spec))
        self._rebuild_index()

    def remove(self, fid: str) -> None:
        self.machines.pop(fid, None)
        self.specs.pop(fid, None)
        self._rebuild_index()

    def _rebuild_index(self) -> None:
        # first-pass index: which machines can possibly start on this port
        self._port_index = {}
        self._any_port = []
        for fid, machine in self.machines.items():
            ports: set[str] = set()
            unconstrained = False
            for _, (pattern, pset, _) in machine.start_transitions():
                if pset is None:
                    unconstrained = True
                else:
                    ports |= pset
            if unconstrained:
                self._any_port.append(fid)
            else:
                for p in ports:
                    self._port_index.setdefault(p, []).append(fid)

    def match_event(self, event: TraceEvent) -> tuple[str, ...]:
        """Tag set for this event; advances all sequence run states."""
        self.counters.events_seen += 1
        tags = []
        if self.dispatch:
            startable = set(self._port_index.get(event.port, ()))
            startable.update(self._any_port)
            for fid, machine in self.machines.items():
                if fid in startable:
                    if machine.step(event, self.counters, True, from_start=True):
                        tags.append(fid)
                elif machine.current:
                    if machine.step(event, self.counters, True, from_start=False):
                        tags.append(fid)
                # else: the machine cannot react to this event at all
        else:
            for fid, machine in self.machines.items():
                if machine.step(event, self.counters, False, from_start=True):
                    tags.append(fid)
        return tuple(sorted(tags))

    # run-state snapshots let a driver replay from a checkpoint
    def run_state(self) -> dict[str, frozenset]:
        return {fid: m.current for fid, m in self.machines.items()}

    def restore_run_state(self, state: dict[str, frozenset]) -> None:
        for fid, machine in self.machines.items():
            machine.current = state.get(fid, frozenset())

    def reset(self) -> None:
        for machine in self.machines.values():
            machine.current = frozenset()
        self.counters = MatchCounters()


def union(machines: Iterable[tuple[str, FilterSpec]], dispatch: bool = True) -> MergedMatcher:
    """Merge compiled filters into one tagged matcher."""
    merged = MergedMatcher(dispatch=dispatch)
    for fid, spec in machines:
        if fid != spec.id:
            spec = FilterSpec(fid, spec.pattern, spec.wanted_attrs, spec.is_sequence)
        merged.add(spec)
    return merged


def match_positions(spec: FilterSpec, events: Iterable[TraceEvent]) -> list[int]:
    """Chronos at which the filter matches (naive single-filter scan)."""
    matcher = MergedMatcher([spec], dispatch=False)
    return [ev.chrono for ev in events if matcher.match_event(ev)]
