"""Client-side library: sessions, state mirroring, reference analyzers.

A Session is a single-consumer blocking connection. Because delivery is
strictly FIFO per client, control replies (acks, snapshots) can be awaited
inline while any events that arrive in between are buffered, never lost.

The mirror applies incremental deltas in place; ``DeltaInconsistent`` on a
filtered stream marks the mirror stale, and the default policy is to
resynchronize from a paused snapshot.
"""

from __future__ import annotations

import socket
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .filters import MergedMatcher, parse_filters
from .protocol import LineSocket, ProtocolError, parse_endpoint
from .trace_model import (
    DeltaInconsistent,
    FullState,
    TraceEvent,
    apply_ops_inplace,
    event_from_json,
)


class ConnectError(Exception):
    pass


class SubscribeRejected(Exception):
    pass


@dataclass
class AnalyzerTimings:
    t_filter_ns: int = 0
    t_decode_ns: int = 0
    t_rebuild_ns: int = 0
    t_exec_ns: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MirrorState:
    """Client-side copy of the engine's full state."""

    state: Optional[FullState] = None
    last_applied_chrono: int = -1
    gaps_seen: int = 0

    def load(self, state: FullState) -> None:
        self.state = state
        self.last_applied_chrono = state.chrono

    def rebuild(self, event: TraceEvent) -> None:
        """Apply one incremental event in place.

        Raises DeltaInconsistent when the stream has structural holes the
        delta vocabulary cannot bridge; the caller should resync.
        """
        if self.state is None:
            raise DeltaInconsistent("no base state; snapshot required")
        if event.chrono <= self.last_applied_chrono:
            raise DeltaInconsistent(
                "event %d behind mirror chrono %d" % (event.chrono, self.last_applied_chrono)
            )
        if event.delta is None:
            raise DeltaInconsistent("event %d carries no delta" % event.chrono)
        if event.chrono > self.last_applied_chrono + 1:
            self.gaps_seen += 1
        apply_ops_inplace(self.state, event.delta)
        self.state.chrono = event.chrono
        self.last_applied_chrono = event.chrono


class Session:
    """One analyzer connection: hello/ack handshake, subscriptions, events."""

    def __init__(self, endpoint: str, analyzer_id: str = "analyzer", timings: Optional[AnalyzerTimings] = None):
        host, port = parse_endpoint(endpoint)
        try:
            sock = socket.create_connection((host, port), timeout=30.0)
        except OSError as exc:
            raise ConnectError(str(exc)) from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.conn = LineSocket(sock)
        self.timings = timings if timings is not None else AnalyzerTimings()
        self._pending: deque = deque()
        self.ended = False
        self.end_info: Optional[dict] = None
        self.protocol_version: Optional[str] = None
        self.conn.send({"type": "hello", "analyzer_id": analyzer_id})
        ack = self._await_reply(("ack",))
        self.protocol_version = ack.get("protocol_version")

    # -- low-level routing ---------------------------------------------

    def _next_message(self) -> Optional[dict]:
        line = self.conn.recv_line()
        if line is None:
            return None
        t0 = time.perf_counter_ns()
        from .protocol import decode_message

        msg = decode_message(line)
        if msg.get("type") == "event":
            msg["_event"] = event_from_json(msg)
        self.timings.t_decode_ns += time.perf_counter_ns() - t0
        return msg

    def _await_reply(self, kinds: tuple[str, ...]) -> dict:
        """Read until a control reply arrives, buffering events in between."""
        while True:
            msg = self._next_message()
            if msg is None:
                raise ProtocolError("connection closed while waiting for %s" % (kinds,))
            t = msg["type"]
            if t in kinds:
                return msg
            if t == "err":
                raise SubscribeRejected(msg.get("reason", "error"))
            if t in ("event", "end"):
                self._pending.append(msg)
                if t == "end":
                    self.ended = True
            # stray acks/snapshots out of protocol order are dropped

    # -- control ---------------------------------------------------------

    def subscribe(self, source: str) -> str:
        self.conn.send({"type": "subscribe", "source": source})
        return self._await_reply(("ack",)).get("id", "")

    def unsubscribe(self, fid: str) -> None:
        self.conn.send({"type": "unsubscribe", "id": fid})
        self._await_reply(("ack",))

    def pause(self) -> int:
        self.conn.send({"type": "pause"})
        return int(self._await_reply(("ack",)).get("chrono", 0))

    def resume(self) -> int:
        self.conn.send({"type": "resume"})
        return int(self._await_reply(("ack",)).get("chrono", 0))

    def release(self) -> None:
        """Release one start-barrier slot on a --wait-clients server."""
        self.resume()

    def snapshot_req(self) -> FullState:
        self.conn.send({"type": "snapshot_req"})
        msg = self._await_reply(("snapshot",))
        return FullState.from_json(msg["state"])

    def bye(self) -> None:
        try:
            self.conn.send({"type": "bye"})
        except OSError:
            pass
        self.conn.close()

    # -- event stream ------------------------------------------------------

    def events(self) -> Iterator[TraceEvent]:
        """Decoded events in delivery order, until the stream ends."""
        while True:
            if self._pending:
                msg = self._pending.popleft()
            else:
                if self.ended:
                    return
                msg = self._next_message()
                if msg is None:
                    return
            t = msg["type"]
            if t == "event":
                yield msg.get("_event") or event_from_json(msg)
            elif t == "end":
                self.ended = True
                self.end_info = msg
                return
            # acks from unawaited control traffic are skipped


def connect_and_subscribe(
    endpoint: str, filters: list[str], analyzer_id: str = "analyzer", release: bool = False
) -> Session:
    """Handshake and subscribe every filter source; session is then live.

    ``release=True`` frees one start-barrier slot afterwards (servers run
    with --wait-clients hold the engine until every analyzer has done so).
    """
    session = Session(endpoint, analyzer_id=analyzer_id)
    for source in filters:
        for block in _split_blocks(source):
            session.subscribe(block)
    if release:
        session.release()
    return session


def _split_blocks(source: str) -> list[str]:
    # a file may hold several filter blocks; subscribe sends one at a time
    specs = parse_filters(source)
    if len(specs) <= 1:
        return [source] if specs else []
    out = []
    rest = source
    for spec in specs:
        # resplit on the next 'filter' keyword; blocks are brace-balanced
        ix = rest.index("filter")
        end = rest.index("}", ix) + 1
        out.append(rest[ix:end])
        rest = rest[end:]
    return out


def snapshot_resync(session: Session, mirror: MirrorState) -> MirrorState:
    """Pause, fetch the boundary snapshot, resume; mirror restarts from it."""
    session.pause()
    try:
        state = session.snapshot_req()
        mirror.load(state)
    finally:
        session.resume()
    return mirror


# ---------------------------------------------------------------------------
# Reference analyzers
# ---------------------------------------------------------------------------

_PORT_DISPLAY = {
    "call": "Call",
    "exit": "Exit",
    "fail": "Fail",
    "redo": "Redo",
    "exception": "Exception",
}

WRAPPER_PRED = "$call$/1"

BYRD_FILTER = (
    "filter byrd { when port in (call, exit, fail, redo, exception) attrs depths, goal, pred }"
)
EVERYTHING_FILTER = "filter all { when chrono >= 0 attrs depths, goal, pred, detail, delta }"


def byrd_line(event: TraceEvent) -> str:
    inv, depth = event.attrs["depths"]
    return "%7d %4d  %s: %s" % (inv, depth, _PORT_DISPLAY[event.port], event.attrs.get("goal", ""))


def byrd_printer(session: Session, out=None) -> list[str]:
    """Render Byrd-port events in classic two-depth-column format."""
    lines = []
    timings = session.timings
    for event in session.events():
        t0 = time.perf_counter_ns()
        if event.port in _PORT_DISPLAY and "depths" in event.attrs:
            line = byrd_line(event)
            lines.append(line)
            if out is not None:
                print(line, file=out)
        timings.t_exec_ns += time.perf_counter_ns() - t0
    return lines


@dataclass
class DepthStats:
    histogram: dict[int, int] = field(default_factory=dict)
    events: int = 0

    @property
    def max_depth(self) -> int:
        return max(self.histogram) if self.histogram else 0

    @property
    def mean_depth(self) -> float:
        total = sum(d * c for d, c in self.histogram.items())
        n = sum(self.histogram.values())
        return total / n if n else 0.0

    def to_json(self) -> dict:
        return {
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "events": self.events,
            "max_depth": self.max_depth,
            "mean_depth": self.mean_depth,
        }


def depth_stats(session: Session, client_refilter: Optional[MergedMatcher] = None) -> DepthStats:
    """Proof-tree depth distribution over received events.

    Depths are user-goal depths: the top-level wrapper invocation is
    excluded and depths shift down by one so the queried goal sits at
    depth 1.
    """
    stats = DepthStats()
    timings = session.timings
    for event in session.events():
        if client_refilter is not None:
            t0 = time.perf_counter_ns()
            matched = client_refilter.match_event(event)
            timings.t_filter_ns += time.perf_counter_ns() - t0
            if not matched:
                continue
        t0 = time.perf_counter_ns()
        stats.events += 1
        depths = event.attrs.get("depths")
        if depths and event.attrs.get("pred") != WRAPPER_PRED:
            d = depths[1] - 1
            stats.histogram[d] = stats.histogram.get(d, 0) + 1
        timings.t_exec_ns += time.perf_counter_ns() - t0
    return stats


@dataclass
class NodeCounts:
    search_nodes: int = 0
    proof_nodes: int = 0
    events: int = 0
    gaps_seen: int = 0


def node_counter(session: Session, mirror: Optional[MirrorState] = None) -> NodeCounts:
    """Search/proof tree sizes via full-state mirroring of an unfiltered stream."""
    timings = session.timings
    if mirror is None or mirror.state is None:
        mirror = mirror or MirrorState()
        mirror.load(snapshot_via_session(session))
    counts = NodeCounts()
    for event in session.events():
        t0 = time.perf_counter_ns()
        mirror.rebuild(event)
        timings.t_rebuild_ns += time.perf_counter_ns() - t0
        counts.events += 1
    t0 = time.perf_counter_ns()
    counts.search_nodes = len(mirror.state.search_nodes)
    counts.proof_nodes = len(mirror.state.proof_nodes)
    counts.gaps_seen = mirror.gaps_seen
    timings.t_exec_ns += time.perf_counter_ns() - t0
    return counts


def snapshot_via_session(session: Session) -> FullState:
    return session.snapshot_req()


@dataclass
class SlowResult:
    events: int = 0
    total_delay_ns: int = 0


def slow_analyzer(session: Session, delay_per_event_s: float) -> SlowResult:
    """Deliberately slow consumer: sleeps after every delivered event."""
    result = SlowResult()
    timings = session.timings
    for _event in session.events():
        t0 = time.perf_counter_ns()
        time.sleep(delay_per_event_s)
        dt = time.perf_counter_ns() - t0
        result.events += 1
        result.total_delay_ns += dt
        timings.t_exec_ns += dt
    return result


def drain(session: Session) -> int:
    """Null analyzer: consume and count."""
    n = 0
    for _ in session.events():
        n += 1
    return n
