"""Independent oracles the test suite checks the implementation against.

Nothing here reuses the code paths under test: queens/CSP counts come from
exhaustive enumeration, filter semantics from naive per-event re-scans, and
constraint evaluation from direct arithmetic on total assignments.
"""

from __future__ import annotations

import itertools

from tracelens.filters import FilterSpec, MergedMatcher
from tracelens.trace_model import TraceEvent


def brute_force_queens(n: int) -> int:
    """Count non-attacking placements by permutation enumeration."""
    count = 0
    for perm in itertools.permutations(range(1, n + 1)):
        if all(abs(perm[i] - perm[j]) != j - i for i in range(n) for j in range(i + 1, n)):
            count += 1
    return count


def brute_force_csp(var_names, bounds, constraints) -> int:
    """Count solutions of a binary CSP by full enumeration.

    ``constraints`` are (kind, x, y, c) tuples in the solver's vocabulary.
    """
    lo, hi = bounds
    count = 0
    for combo in itertools.product(range(lo, hi + 1), repeat=len(var_names)):
        a = dict(zip(var_names, combo))
        if all(_holds(kind, a[x], a.get(y), c) for kind, x, y, c in constraints):
            count += 1
    return count


def _holds(kind, x, y, c) -> bool:
    if kind == "lt":
        return x < y + c
    if kind == "neq":
        return x != y + c
    if kind == "eq":
        return x == y + c
    if kind == "sum":
        return x + y == c
    raise ValueError(kind)


def naive_tags(specs: list[FilterSpec], events: list[TraceEvent]) -> list[tuple[str, ...]]:
    """Per-event tag sets from evaluating every filter independently."""
    matchers = [MergedMatcher([spec], dispatch=False) for spec in specs]
    out = []
    for ev in events:
        tags = []
        for spec, m in zip(specs, matchers):
            if m.match_event(ev):
                tags.append(spec.id)
        out.append(tuple(sorted(tags)))
    return out


def client_side_filter(
    broadcast_events: list[TraceEvent], client_specs: dict[str, list[FilterSpec]]
) -> dict[str, list[TraceEvent]]:
    """Filter a full-broadcast stream on the client side.

    The reference semantics driven mode must reproduce: per client, an event
    is delivered when any of its subscriptions matches; the delivered attrs
    are the union of the matching subscriptions' selections; tags name the
    matching subscription ids.
    """
    matchers = {
        client: [(spec, MergedMatcher([spec], dispatch=False)) for spec in specs]
        for client, specs in client_specs.items()
    }
    streams: dict[str, list[TraceEvent]] = {client: [] for client in client_specs}
    for ev in broadcast_events:
        for client, pairs in matchers.items():
            hits = [spec for spec, m in pairs if m.match_event(ev)]
            if not hits:
                continue
            wanted: set[str] = set()
            for spec in hits:
                wanted.update(spec.wanted_attrs)
            attrs = {}
            for name in ("depths", "goal", "pred", "detail"):
                if name in wanted and name in ev.attrs:
                    attrs[name] = ev.attrs[name]
            if "domains" in wanted and "domains" in ev.attrs:
                attrs["domains"] = ev.attrs["domains"]
            streams[client].append(
                TraceEvent(
                    chrono=ev.chrono,
                    port=ev.port,
                    attrs=attrs,
                    delta=ev.delta if "delta" in wanted else None,
                    tags=tuple(sorted(spec.id for spec in hits)),
                )
            )
    return streams
