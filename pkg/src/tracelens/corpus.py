"""Workload corpus: program generators for benchmarks and tests.

Three families, covering both trace regimes: a Byrd-heavy recursion, the
propagation-heavy N-queens models, and seeded random binary CSPs whose
solution counts a brute-force enumerator can check.
"""

from __future__ import annotations

import random
from dataclasses import dataclass


BENCH_SOURCE = "bench(0).\nbench(N) :- N>0, N1 is N-1, bench(N1).\n"


@dataclass(frozen=True)
class CorpusProgram:
    name: str
    source: str
    goal: str


def bench_program(n: int) -> CorpusProgram:
    """Byrd-trace recursion counting down from n."""
    return CorpusProgram("bench(%d)" % n, BENCH_SOURCE, "bench(%d)" % n)


def queens_program(n: int) -> CorpusProgram:
    """Flat N-queens model: pairwise disequalities on columns and diagonals."""
    vs = ["Q%d" % i for i in range(1, n + 1)]
    lines = ["queens :-", "    fd_domain([%s], 1, %d)," % (",".join(vs), n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = j - i
            lines.append("    fd_post(%s #\\= %s)," % (vs[i], vs[j]))
            lines.append("    fd_post(%s #\\= %s + %d)," % (vs[i], vs[j], d))
            lines.append("    fd_post(%s #\\= %s - %d)," % (vs[i], vs[j], d))
    lines.append("    fd_labeling([%s])." % ",".join(vs))
    return CorpusProgram("queens(%d)" % n, "\n".join(lines) + "\n", "queens")


@dataclass(frozen=True)
class CspInstance:
    program: CorpusProgram
    var_names: list[str]
    domain: tuple[int, int]
    constraints: list[tuple[str, str, str, int]]  # (kind, x, y, c)


def random_csp(seed: int, n_vars: int = 4, dom_size: int = 4, n_constraints: int = 5) -> CspInstance:
    """A random binary CSP over ``X1..Xn`` with domains ``1..dom_size``.

    Constraint kinds are drawn from the solver's vocabulary; the instance is
    small enough for exhaustive checking.
    """
    rng = random.Random(seed)
    vs = ["X%d" % i for i in range(1, n_vars + 1)]
    cons: list[tuple[str, str, str, int]] = []
    lines = ["csp :-", "    fd_domain([%s], 1, %d)," % (",".join(vs), dom_size)]
    for _ in range(n_constraints):
        x, y = rng.sample(vs, 2)
        kind = rng.choice(["lt", "neq", "neq", "eq", "sum"])
        if kind == "lt":
            c = rng.randint(-1, 1)
            cons.append(("lt", x, y, c))
            lines.append("    fd_post(%s #< %s)," % (x, _offset(y, c)))
        elif kind == "neq":
            c = rng.randint(-1, 1)
            cons.append(("neq", x, y, c))
            lines.append("    fd_post(%s #\\= %s)," % (x, _offset(y, c)))
        elif kind == "eq":
            c = rng.randint(-1, 1)
            cons.append(("eq", x, y, c))
            lines.append("    fd_post(%s #= %s)," % (x, _offset(y, c)))
        else:
            c = rng.randint(2, 2 * dom_size)
            cons.append(("sum", x, y, c))
            lines.append("    fd_post(%s + %s #= %d)," % (x, y, c))
    lines.append("    fd_labeling([%s])." % ",".join(vs))
    prog = CorpusProgram("csp(seed=%d)" % seed, "\n".join(lines) + "\n", "csp")
    return CspInstance(prog, vs, (1, dom_size), cons)


def _offset(var: str, c: int) -> str:
    if c == 0:
        return var
    return "%s + %d" % (var, c) if c > 0 else "%s - %d" % (var, -c)


def random_logic_program(seed: int) -> CorpusProgram:
    """A terminating random logic program mixing recursion and multi-fact choice."""
    rng = random.Random(seed)
    k = rng.randint(2, 5)
    facts = sorted(rng.sample(range(1, 9), rng.randint(2, 4)))
    threshold = rng.randint(1, 8)
    lines = ["down(0).", "down(N) :- N>0, M is N-1, down(M)."]
    for v in facts:
        lines.append("item(%d)." % v)
    lines.append("pick(X) :- item(X), X>%d." % threshold)
    lines.append("main :- down(%d), item(A), pick(B), B>A." % k)
    return CorpusProgram("logic(seed=%d)" % seed, "\n".join(lines) + "\n", "main")


def standard_corpus() -> list[CorpusProgram]:
    """The default benchmark corpus."""
    return [
        bench_program(12),
        queens_program(4),
        queens_program(6),
        random_csp(1234).program,
    ]
