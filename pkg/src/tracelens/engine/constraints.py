"""Finite-domain constraints: normalization and bounds revision.

The vocabulary is binary-with-offset plus a two-variable sum:

  lt   x < y + c          neq  x != y + c        eq   x = y + c
  ltc  x < c              neqc x != c            eqc  x = c
  sum  x + y = c

Comparison goals posted through ``fd_post/1`` (#<, #>, #=, #\\=, with an
optional integer offset on either side) normalize into these kinds. Revision
is bounds-consistent for the ordering/equality kinds; disequality removes the
offending value once the other side is fixed, which is what makes labeling
runs produce informative narrowing events.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..trace_model import Domain
from .terms import Int, Struct, Term, Var, deref, render


class ConstraintError(Exception):
    """A term fd_post/1 cannot interpret as a supported constraint."""


@dataclass(frozen=True)
class Constraint:
    cid: int
    kind: str
    x: str
    y: Optional[str]
    c: int

    def vars(self) -> tuple[str, ...]:
        return (self.x,) if self.y is None else (self.x, self.y)

    def text(self) -> str:
        off = "" if self.c == 0 else ("+%d" % self.c if self.c > 0 else "%d" % self.c)
        if self.kind == "lt":
            return "%s#<%s%s" % (self.x, self.y, off)
        if self.kind == "neq":
            return "%s#\\=%s%s" % (self.x, self.y, off)
        if self.kind == "eq":
            return "%s#=%s%s" % (self.x, self.y, off)
        if self.kind == "sum":
            return "%s+%s#=%d" % (self.x, self.y, self.c)
        if self.kind == "ltc":
            return "%s#<%d" % (self.x, self.c)
        if self.kind == "gtc":
            return "%s#>%d" % (self.x, self.c)
        if self.kind == "neqc":
            return "%s#\\=%d" % (self.x, self.c)
        if self.kind == "eqc":
            return "%s#=%d" % (self.x, self.c)
        raise ValueError(self.kind)


@dataclass
class Revision:
    """Outcome of revising one constraint against current domains."""

    narrowings: list[tuple[str, Domain]]  # (var, removed values)
    entailed: bool
    failed_var: Optional[str]  # revision would wipe this variable


def _linear_side(t: Term) -> tuple[Optional[Var], int]:
    """Decompose a side into (variable or None, integer offset)."""
    t = deref(t)
    if isinstance(t, Int):
        return None, t.value
    if isinstance(t, Var):
        return t, 0
    if isinstance(t, Struct) and t.arity == 2 and t.functor in ("+", "-"):
        a, b = deref(t.args[0]), deref(t.args[1])
        sign = 1 if t.functor == "+" else -1
        if isinstance(a, Var) and isinstance(b, Int):
            return a, sign * b.value
        if isinstance(a, Int) and isinstance(b, Var) and t.functor == "+":
            return b, a.value
    raise ConstraintError("unsupported constraint side: %s" % render(t))


def _sum_side(t: Term) -> Optional[tuple[Var, Var]]:
    t = deref(t)
    if isinstance(t, Struct) and t.functor == "+" and t.arity == 2:
        a, b = deref(t.args[0]), deref(t.args[1])
        if isinstance(a, Var) and isinstance(b, Var):
            return a, b
    return None


def normalize(term: Term, cid: int, name_of) -> Constraint:
    """Turn an fd_post/1 argument into a Constraint.

    ``name_of`` maps a Var cell to its fd-store name and raises if the
    variable has no domain yet.
    """
    t = deref(term)
    if not (isinstance(t, Struct) and t.arity == 2 and t.functor in ("#<", "#>", "#=", "#\\=")):
        raise ConstraintError("unsupported constraint: %s" % render(t))
    op = t.functor
    lhs, rhs = t.args

    if op == "#=":
        pair = _sum_side(lhs)
        if pair is not None:
            rv = deref(rhs)
            if not isinstance(rv, Int):
                raise ConstraintError("sum constraint needs an integer right side")
            return Constraint(cid, "sum", name_of(pair[0]), name_of(pair[1]), rv.value)

    xv, xc = _linear_side(lhs)
    yv, yc = _linear_side(rhs)
    c = yc - xc
    if op == "#>":
        # x > y + c  <=>  y < x - c
        xv, yv, c = yv, xv, -c
        op = "#<"
    kind = {"#<": "lt", "#=": "eq", "#\\=": "neq"}[op]

    if xv is None and yv is None:
        raise ConstraintError("constraint with no variables")
    if xv is None:
        # c0 op y + c  -> rewrite with the variable on the left
        if kind == "lt":  # c0 < y + c  <=>  y > c0 - c  <=>  not(y < c0 - c + 1) ... keep as gtc via ltc mirror
            return Constraint(cid, "gtc", name_of(yv), None, -c)
        if kind == "eq":
            return Constraint(cid, "eqc", name_of(yv), None, -c)
        return Constraint(cid, "neqc", name_of(yv), None, -c)
    if yv is None:
        if kind == "lt":
            return Constraint(cid, "ltc", name_of(xv), None, c)
        if kind == "eq":
            return Constraint(cid, "eqc", name_of(xv), None, c)
        return Constraint(cid, "neqc", name_of(xv), None, c)
    return Constraint(cid, kind, name_of(xv), name_of(yv), c)


def revise(con: Constraint, domains: dict[str, Domain]) -> Revision:
    """Bounds revision of one constraint. Pure: reports removals only."""
    x = domains[con.x]
    out = Revision([], False, None)

    def narrow(var: str, new: Domain, old: Domain) -> Domain:
        if new.is_empty():
            out.failed_var = var
            removed = old
        else:
            removed = old.subtract(new)
        if not removed.is_empty():
            out.narrowings.append((var, removed))
        return new

    if con.kind == "ltc":
        new = narrow(con.x, x.remove_above(con.c - 1), x)
        out.entailed = out.failed_var is None
        return out
    if con.kind == "gtc":
        new = narrow(con.x, x.remove_below(con.c + 1), x)
        out.entailed = out.failed_var is None
        return out
    if con.kind == "eqc":
        if con.c in x:
            narrow(con.x, Domain.from_values([con.c]), x)
            out.entailed = True
        else:
            out.failed_var = con.x
            out.narrowings.append((con.x, x))
        return out
    if con.kind == "neqc":
        if x.is_singleton() and x.value == con.c:
            out.failed_var = con.x
            out.narrowings.append((con.x, x))
            return out
        if con.c in x:
            narrow(con.x, x.remove_value(con.c), x)
        out.entailed = out.failed_var is None
        return out

    y = domains[con.y]
    if con.kind == "lt":
        # x < y + c
        nx = narrow(con.x, x.remove_above(y.max + con.c - 1), x)
        if out.failed_var is None:
            ny = narrow(con.y, y.remove_below(nx.min - con.c + 1), y)
            if out.failed_var is None:
                out.entailed = nx.max < ny.min + con.c
        return out
    if con.kind == "eq":
        # x = y + c  (bounds)
        nx = narrow(con.x, x.remove_below(y.min + con.c).remove_above(y.max + con.c), x)
        if out.failed_var is None:
            ny = narrow(con.y, y.remove_below(nx.min - con.c).remove_above(nx.max - con.c), y)
            if out.failed_var is None:
                out.entailed = nx.is_singleton() and ny.is_singleton() and nx.value == ny.value + con.c
        return out
    if con.kind == "neq":
        # x != y + c: prune only once one side is fixed
        if x.is_singleton() and y.is_singleton():
            if x.value == y.value + con.c:
                out.failed_var = con.x
                out.narrowings.append((con.x, x))
            else:
                out.entailed = True
            return out
        if y.is_singleton():
            v = y.value + con.c
            if v in x:
                narrow(con.x, x.remove_value(v), x)
            out.entailed = out.failed_var is None
            return out
        if x.is_singleton():
            v = x.value - con.c
            if v in y:
                narrow(con.y, y.remove_value(v), y)
            out.entailed = out.failed_var is None
            return out
        # bounds-disjoint means it can never be violated
        out.entailed = x.max < y.min + con.c or x.min > y.max + con.c
        return out
    if con.kind == "sum":
        # x + y = c
        nx = narrow(con.x, x.remove_below(con.c - y.max).remove_above(con.c - y.min), x)
        if out.failed_var is None:
            ny = narrow(con.y, y.remove_below(con.c - nx.max).remove_above(con.c - nx.min), y)
            if out.failed_var is None:
                out.entailed = nx.is_singleton() and ny.is_singleton() and nx.value + ny.value == con.c
        return out
    raise ValueError("unknown constraint kind %s" % con.kind)


def is_bounds_consistent(con: Constraint, domains: dict[str, Domain]) -> bool:
    """True when a fresh revision would neither narrow nor fail."""
    rev = revise(con, domains)
    return rev.failed_var is None and not rev.narrowings


def holds(con: Constraint, assignment: dict[str, int]) -> bool:
    """Evaluate a constraint under a total assignment (test oracle hook)."""
    x = assignment[con.x]
    if con.kind == "ltc":
        return x < con.c
    if con.kind == "gtc":
        return x > con.c
    if con.kind == "eqc":
        return x == con.c
    if con.kind == "neqc":
        return x != con.c
    y = assignment[con.y]
    if con.kind == "lt":
        return x < y + con.c
    if con.kind == "eq":
        return x == y + con.c
    if con.kind == "neq":
        return x != y + con.c
    if con.kind == "sum":
        return x + y == con.c
    raise ValueError(con.kind)
