"""Term representation, unification, rendering, and arithmetic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Int:
    value: int


class Var:
    """A logic variable: a mutable binding cell with a display name."""

    __slots__ = ("name", "ref")

    def __init__(self, name: str):
        self.name = name
        self.ref: Optional[Term] = None

    def __repr__(self) -> str:
        return "Var(%s)" % self.name


@dataclass(frozen=True)
class Struct:
    functor: str
    args: tuple["Term", ...]

    @property
    def arity(self) -> int:
        return len(self.args)


Term = Union[Atom, Int, Var, Struct]

EMPTY_LIST = Atom("[]")


def mklist(items: list[Term], tail: Term = EMPTY_LIST) -> Term:
    out = tail
    for item in reversed(items):
        out = Struct(".", (item, out))
    return out


def list_items(t: Term) -> list[Term]:
    """Flatten a proper list term; raises ValueError on improper tails."""
    items = []
    t = deref(t)
    while isinstance(t, Struct) and t.functor == "." and t.arity == 2:
        items.append(deref(t.args[0]))
        t = deref(t.args[1])
    if t != EMPTY_LIST:
        raise ValueError("not a proper list")
    return items


def deref(t: Term) -> Term:
    while isinstance(t, Var) and t.ref is not None:
        t = t.ref
    return t


def bind(v: Var, t: Term, trail: list) -> None:
    v.ref = t
    trail.append(("bind", v))


def unify(a: Term, b: Term, trail: list) -> bool:
    a, b = deref(a), deref(b)
    if a is b:
        return True
    if isinstance(a, Var):
        bind(a, b, trail)
        return True
    if isinstance(b, Var):
        bind(b, a, trail)
        return True
    if isinstance(a, Atom) and isinstance(b, Atom):
        return a.name == b.name
    if isinstance(a, Int) and isinstance(b, Int):
        return a.value == b.value
    if isinstance(a, Struct) and isinstance(b, Struct):
        if a.functor != b.functor or a.arity != b.arity:
            return False
        return all(unify(x, y, trail) for x, y in zip(a.args, b.args))
    return False


def undo_bindings(trail: list, mark: int) -> None:
    while len(trail) > mark:
        tag, v = trail.pop()
        v.ref = None


def term_vars(t: Term) -> Iterator[Var]:
    t = deref(t)
    if isinstance(t, Var):
        yield t
    elif isinstance(t, Struct):
        for a in t.args:
            yield from term_vars(a)


def rename(t: Term, mapping: dict[int, Var], fresh: "VarNamer") -> Term:
    """Copy a term, giving each distinct variable a fresh runtime cell."""
    t = deref(t)
    if isinstance(t, Var):
        cell = mapping.get(id(t))
        if cell is None:
            cell = fresh.new()
            mapping[id(t)] = cell
        return cell
    if isinstance(t, Struct):
        return Struct(t.functor, tuple(rename(a, mapping, fresh) for a in t.args))
    return t


class VarNamer:
    """Allocates display names for runtime variable cells.

    Fresh cells show as ``_<n>``; the counter starts at a nonzero base so
    renamed-clause variables look like the offset-style names real tracers
    print rather than colliding with source names.
    """

    def __init__(self, base: int = 180):
        self._next = base

    def new(self) -> Var:
        self._next += 1
        return Var("_%d" % self._next)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

# Prolog-style operator table: priority and spacing. Alphabetic operators
# print with surrounding spaces, symbolic ones compact ("1 is 2-1", "2>0").
_INFIX = {
    ":-": (1200, True),
    ",": (1000, False),
    ">": (700, False),
    "<": (700, False),
    ">=": (700, False),
    "=<": (700, False),
    "=": (700, False),
    "\\=": (700, False),
    "is": (700, True),
    "#<": (700, False),
    "#>": (700, False),
    "#=": (700, False),
    "#\\=": (700, False),
    "+": (500, False),
    "-": (500, False),
    "*": (400, False),
    "//": (400, False),
    "mod": (400, True),
}

_PLAIN_ATOM = frozenset("abcdefghijklmnopqrstuvwxyz")
_ATOM_REST = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")
_SYMBOL_CHARS = frozenset("+-*/\\^<>=~:.?@#&$")


def _atom_text(name: str) -> str:
    if name in ("[]", "!", ";", "{}"):
        return name
    if name and name[0] in _PLAIN_ATOM and all(c in _ATOM_REST for c in name):
        return name
    if name and all(c in _SYMBOL_CHARS for c in name):
        return name
    return "'%s'" % name.replace("\\", "\\\\").replace("'", "\\'")


def render(t: Term, max_prio: int = 1200) -> str:
    t = deref(t)
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Int):
        return str(t.value)
    if isinstance(t, Atom):
        return _atom_text(t.name)
    if t.functor == "." and t.arity == 2:
        return _render_list(t)
    if t.arity == 2 and t.functor in _INFIX:
        prio, spaced = _INFIX[t.functor]
        op = " %s " % t.functor if spaced else t.functor
        # left argument of a left-associative operator may share the priority
        body = "%s%s%s" % (render(t.args[0], prio), op, render(t.args[1], prio - 1))
        return "(%s)" % body if prio > max_prio else body
    args = ",".join(render(a, 999) for a in t.args)
    return "%s(%s)" % (_atom_text(t.functor), args)


def _render_list(t: Term) -> str:
    parts = []
    cur: Term = t
    while True:
        cur = deref(cur)
        if isinstance(cur, Struct) and cur.functor == "." and cur.arity == 2:
            parts.append(render(cur.args[0], 999))
            cur = cur.args[1]
        elif cur == EMPTY_LIST:
            return "[%s]" % ",".join(parts)
        else:
            return "[%s|%s]" % (",".join(parts), render(cur, 999))


def indicator(t: Term) -> str:
    """The predicate indicator name/arity of a callable term."""
    t = deref(t)
    if isinstance(t, Atom):
        return "%s/0" % t.name
    if isinstance(t, Struct):
        return "%s/%d" % (t.functor, t.arity)
    return "?/?"


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------


class ArithmeticError_(Exception):
    """Unbound variable or non-numeric term inside an arithmetic expression."""


def arith_eval(t: Term) -> int:
    t = deref(t)
    if isinstance(t, Int):
        return t.value
    if isinstance(t, Var):
        raise ArithmeticError_("unbound variable %s in arithmetic" % t.name)
    if isinstance(t, Struct):
        if t.functor == "+" and t.arity == 2:
            return arith_eval(t.args[0]) + arith_eval(t.args[1])
        if t.functor == "-" and t.arity == 2:
            return arith_eval(t.args[0]) - arith_eval(t.args[1])
        if t.functor == "-" and t.arity == 1:
            return -arith_eval(t.args[0])
        if t.functor == "*" and t.arity == 2:
            return arith_eval(t.args[0]) * arith_eval(t.args[1])
        if t.functor == "//" and t.arity == 2:
            d = arith_eval(t.args[1])
            if d == 0:
                raise ArithmeticError_("division by zero")
            return arith_eval(t.args[0]) // d
        if t.functor == "mod" and t.arity == 2:
            d = arith_eval(t.args[1])
            if d == 0:
                raise ArithmeticError_("division by zero")
            return arith_eval(t.args[0]) % d
    raise ArithmeticError_("non-evaluable term %s" % render(t))
