"""Clause-syntax parser and the Program container.

The accepted syntax is a small Prolog subset documented in
``docs/program-syntax.md``: facts and rules over atoms, integers, variables,
compound terms and lists, with ``%`` line comments. Operator terms cover
arithmetic/comparison builtins and the ``#``-prefixed finite-domain
constraint operators used inside ``fd_post/1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .terms import Atom, Int, Struct, Term, Var, mklist


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__("%s at line %d, column %d" % (message, line, col))
        self.line = line
        self.col = col


BUILTINS = {
    ">/2",
    "</2",
    ">=/2",
    "=</2",
    "=/2",
    "is/2",
    "true/0",
    "fd_domain/3",
    "fd_post/1",
    "fd_labeling/1",
}


@dataclass(frozen=True)
class Clause:
    head: Term
    body: tuple[Term, ...]


@dataclass
class Program:
    clauses: list[Clause] = field(default_factory=list)
    _index: dict[str, list[Clause]] = field(default_factory=dict)

    def add(self, clause: Clause) -> None:
        head = clause.head
        if isinstance(head, Atom):
            key = "%s/0" % head.name
        elif isinstance(head, Struct):
            key = "%s/%d" % (head.functor, head.arity)
        else:
            raise ValueError("clause head must be an atom or compound term")
        if key in BUILTINS:
            raise ValueError("cannot redefine builtin %s" % key)
        self.clauses.append(clause)
        self._index.setdefault(key, []).append(clause)

    def lookup(self, indicator: str) -> Optional[list[Clause]]:
        return self._index.get(indicator)

    def defines(self, indicator: str) -> bool:
        return indicator in self._index


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_SYMBOL_CHARS = set("+-*/\\^<>=~:?@#&")
_WORD_START = set("abcdefghijklmnopqrstuvwxyz")
_VAR_START = set("ABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_WORD_REST = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")


@dataclass(frozen=True)
class _Tok:
    kind: str  # atom var int punct symbol end eof
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        c = source[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "%":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if c == "." and (i + 1 >= n or source[i + 1] in " \t\r\n%"):
            toks.append(_Tok("end", ".", start_line, start_col))
            i += 1
            col += 1
            continue
        if c in "()[],|":
            toks.append(_Tok("punct", c, start_line, start_col))
            i += 1
            col += 1
            continue
        if c.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            toks.append(_Tok("int", source[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        if c in _WORD_START:
            j = i
            while j < n and source[j] in _WORD_REST:
                j += 1
            toks.append(_Tok("atom", source[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        if c in _VAR_START:
            j = i
            while j < n and source[j] in _WORD_REST:
                j += 1
            toks.append(_Tok("var", source[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        if c == "'":
            j = i + 1
            buf = []
            while j < n and source[j] != "'":
                if source[j] == "\\" and j + 1 < n:
                    buf.append(source[j + 1])
                    j += 2
                else:
                    buf.append(source[j])
                    j += 1
            if j >= n:
                raise ParseError("unterminated quoted atom", start_line, start_col)
            toks.append(_Tok("atom", "".join(buf), start_line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        if c in _SYMBOL_CHARS:
            j = i
            while j < n and source[j] in _SYMBOL_CHARS:
                j += 1
            toks.append(_Tok("symbol", source[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        raise ParseError("unexpected character %r" % c, start_line, start_col)
    toks.append(_Tok("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Pratt parser over the operator table
# ---------------------------------------------------------------------------

# priority, right-associative?
_BINOPS = {
    ":-": (1200, False),
    ",": (1000, True),
    ">": (700, False),
    "<": (700, False),
    ">=": (700, False),
    "=<": (700, False),
    "=": (700, False),
    "\\=": (700, False),
    "is": (700, False),
    "#<": (700, False),
    "#>": (700, False),
    "#=": (700, False),
    "#\\=": (700, False),
    "+": (500, False),
    "-": (500, False),
    "*": (400, False),
    "//": (400, False),
    "mod": (400, False),
}


class _Parser:
    def __init__(self, source: str):
        self.toks = _tokenize(source)
        self.pos = 0

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def next(self) -> _Tok:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, text: Optional[str] = None) -> _Tok:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            raise ParseError(
                "expected %s%s, found %r" % (kind, " %r" % text if text else "", tok.text or "<eof>"),
                tok.line,
                tok.col,
            )
        return self.next()

    # -- terms ---------------------------------------------------------

    def term(self, max_prio: int, vars: dict[str, Var]) -> Term:
        left = self.primary(vars)
        while True:
            tok = self.peek()
            op = None
            if tok.kind in ("symbol", "atom") and tok.text in _BINOPS:
                op = tok.text
            elif tok.kind == "punct" and tok.text == "," and max_prio >= 1000:
                op = ","
            if op is None:
                break
            prio, right = _BINOPS[op]
            if prio > max_prio:
                break
            self.next()
            rhs = self.term(prio if right else prio - 1, vars)
            left = Struct(op, (left, rhs))
        return left

    def primary(self, vars: dict[str, Var]) -> Term:
        tok = self.next()
        if tok.kind == "int":
            return Int(int(tok.text))
        if tok.kind == "symbol" and tok.text == "-" and self.peek().kind == "int":
            return Int(-int(self.next().text))
        if tok.kind == "var":
            if tok.text == "_":
                return Var("_")
            cell = vars.get(tok.text)
            if cell is None:
                cell = Var(tok.text)
                vars[tok.text] = cell
            return cell
        if tok.kind == "atom":
            if self.peek().kind == "punct" and self.peek().text == "(":
                self.next()
                args = [self.term(999, vars)]
                while self.peek().kind == "punct" and self.peek().text == ",":
                    self.next()
                    args.append(self.term(999, vars))
                self.expect("punct", ")")
                return Struct(tok.text, tuple(args))
            return Atom(tok.text)
        if tok.kind == "punct" and tok.text == "(":
            inner = self.term(1200, vars)
            self.expect("punct", ")")
            return inner
        if tok.kind == "punct" and tok.text == "[":
            return self.list_tail(vars)
        raise ParseError("unexpected token %r" % (tok.text or "<eof>"), tok.line, tok.col)

    def list_tail(self, vars: dict[str, Var]) -> Term:
        if self.peek().kind == "punct" and self.peek().text == "]":
            self.next()
            return Atom("[]")
        items = [self.term(999, vars)]
        while self.peek().kind == "punct" and self.peek().text == ",":
            self.next()
            items.append(self.term(999, vars))
        tail: Term = Atom("[]")
        if self.peek().kind == "punct" and self.peek().text == "|":
            self.next()
            tail = self.term(999, vars)
        self.expect("punct", "]")
        return mklist(items, tail)

    # -- clauses -------------------------------------------------------

    def clauses(self) -> list[Clause]:
        out = []
        while self.peek().kind != "eof":
            vars: dict[str, Var] = {}
            t = self.term(1200, vars)
            self.expect("end")
            if isinstance(t, Struct) and t.functor == ":-" and t.arity == 2:
                out.append(Clause(t.args[0], tuple(flatten_conj(t.args[1]))))
            else:
                out.append(Clause(t, ()))
        return out


def flatten_conj(t: Term) -> list[Term]:
    if isinstance(t, Struct) and t.functor == "," and t.arity == 2:
        return flatten_conj(t.args[0]) + flatten_conj(t.args[1])
    return [t]


def parse_term(source: str) -> Term:
    """Parse a single goal term (e.g. from --goal on the command line)."""
    p = _Parser(source)
    t = p.term(1200, {})
    tok = p.peek()
    if tok.kind == "end":
        p.next()
        tok = p.peek()
    if tok.kind != "eof":
        raise ParseError("trailing input %r" % tok.text, tok.line, tok.col)
    return t


def load_program(source: str) -> Program:
    """Parse clause text into a Program. Total over the documented grammar."""
    prog = Program()
    for clause in _Parser(source).clauses():
        head = clause.head
        if not isinstance(head, (Atom, Struct)) or (isinstance(head, Struct) and head.functor in _BINOPS):
            raise ParseError("clause head must be a predicate", 1, 1)
        prog.add(clause)
    return prog
