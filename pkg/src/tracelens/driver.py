"""The tracer driver: at-source filtering, attribute extraction, dispatch.

``DriverCore`` is the pure per-event pipeline (match, extract, encode) and
is what correctness tests exercise; ``DriverServer`` wraps it with the TCP
session machinery: one logical event loop owns the engine, the merged
matcher and all counters, while per-client reader/writer threads only move
parsed messages through ordered queues. Backpressure is blocking: a slow
analyzer stalls the engine rather than losing events.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .engine import Engine, Program, parse_term
from .filters import DuplicateId, FilterParseError, FilterSpec, MergedMatcher, parse_filters
from .protocol import PROTOCOL_VERSION, LineSocket, ProtocolError, parse_endpoint
from .trace_model import FullState, TraceEvent

MODES = ("off", "full_broadcast", "driven")


class BindError(Exception):
    pass


@dataclass
class DriverConfig:
    """Server knobs.

    ``wait_clients=N`` is the start barrier: the engine begins implicitly
    paused N times and each analyzer releases one slot with ``resume`` once
    its subscriptions are in place. With ``wait_clients=0`` the server
    instead waits ``accept_grace_s`` for early connections and then runs.
    """

    mode: str = "driven"
    checkpoint_every: int = 1000
    listen: str = "127.0.0.1:0"
    wait_clients: int = 0
    accept_grace_s: float = 0.2
    backpressure: str = "block"
    outbox_size: int = 256
    linger_s: float = 10.0


@dataclass
class Subscription:
    client: str
    spec: FilterSpec
    delivered_events: int = 0
    delivered_bytes: int = 0


@dataclass
class ServerReport:
    """Server-side workload fields, one run."""

    scenario: str
    mode: str
    t_prog_ns: int = 0
    t_engine_ns: int = 0
    t_cond_ns: int = 0
    t_extract_ns: int = 0
    t_encode_com_ns: int = 0
    wall_ns: int = 0
    events_emitted: int = 0
    events_delivered: int = 0
    bytes_total: int = 0
    per_subscription: dict = field(default_factory=dict)
    predicate_evaluations: int = 0
    solutions: int = 0
    final_chrono: int = 0
    checkpoints: int = 0
    clients: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# Pure per-event pipeline
# ---------------------------------------------------------------------------


class DriverCore:
    """Match, extract and encode one event for any number of clients.

    Owns the merged matcher and the subscription table. Stateless about
    transport: returns encoded lines tagged with their destination client.
    """

    def __init__(self, mode: str = "driven", dispatch: bool = True):
        if mode not in MODES:
            raise ValueError("unknown mode %r" % mode)
        self.mode = mode
        self.matcher = MergedMatcher(dispatch=dispatch)
        self.subscriptions: dict[tuple[str, str], Subscription] = {}
        self.t_cond_ns = 0
        self.t_extract_ns = 0
        self.t_encode_ns = 0

    # -- subscription table ---------------------------------------------

    def subscribe(self, client: str, spec: FilterSpec) -> None:
        key = (client, spec.id)
        if key in self.subscriptions:
            raise DuplicateId(spec.id)
        existing = self.matcher.specs.get(spec.id)
        if existing is None:
            self.matcher.add(spec)
        elif existing.pattern != spec.pattern or existing.wanted_attrs != spec.wanted_attrs:
            raise DuplicateId(spec.id)
        self.subscriptions[key] = Subscription(client, spec)

    def unsubscribe(self, client: str, fid: str) -> bool:
        sub = self.subscriptions.pop((client, fid), None)
        if sub is None:
            return False
        if not any(f == fid for (_, f) in self.subscriptions):
            self.matcher.remove(fid)
        return True

    def drop_client(self, client: str) -> None:
        for key in [k for k in self.subscriptions if k[0] == client]:
            self.unsubscribe(*key)

    def clients_of(self, fid: str) -> list[str]:
        return [c for (c, f) in self.subscriptions if f == fid]

    # -- per-event pipeline ----------------------------------------------

    def on_event(
        self,
        event: TraceEvent,
        clients: list[str],
        domains_for: Optional[Callable[[dict], dict]] = None,
    ) -> list[tuple[str, bytes, tuple[str, ...]]]:
        """Process one engine event; return (client, line, tags) deliveries."""
        if self.mode == "off":
            return []
        out: list[tuple[str, bytes, tuple[str, ...]]] = []

        if self.mode == "full_broadcast":
            t0 = time.perf_counter_ns()
            attrs = dict(event.attrs)
            if domains_for is not None:
                doms = domains_for(event.attrs.get("detail", {}))
                if doms:
                    attrs["domains"] = doms
            self.t_extract_ns += time.perf_counter_ns() - t0
            t0 = time.perf_counter_ns()
            line = _encode(event, attrs, (), include_delta=True)
            self.t_encode_ns += time.perf_counter_ns() - t0
            for client in clients:
                out.append((client, line, ()))
            return out

        t0 = time.perf_counter_ns()
        tags = self.matcher.match_event(event)
        self.t_cond_ns += time.perf_counter_ns() - t0
        if not tags:
            return out

        by_client: dict[str, list[Subscription]] = {}
        for fid in tags:
            for (client, f), sub in self.subscriptions.items():
                if f == fid:
                    by_client.setdefault(client, []).append(sub)

        domains_cache: Optional[dict] = None
        for client, subs in by_client.items():
            t0 = time.perf_counter_ns()
            wanted: set[str] = set()
            for sub in subs:
                wanted.update(sub.spec.wanted_attrs)
            attrs = {}
            for name in ("depths", "goal", "pred", "detail"):
                if name in wanted and name in event.attrs:
                    attrs[name] = event.attrs[name]
            if "domains" in wanted and domains_for is not None:
                if domains_cache is None:
                    domains_cache = domains_for(event.attrs.get("detail", {}))
                if domains_cache:
                    attrs["domains"] = domains_cache
            include_delta = "delta" in wanted
            self.t_extract_ns += time.perf_counter_ns() - t0

            t0 = time.perf_counter_ns()
            client_tags = tuple(sorted(sub.spec.id for sub in subs))
            line = _encode(event, attrs, client_tags, include_delta=include_delta)
            self.t_encode_ns += time.perf_counter_ns() - t0
            for sub in subs:
                sub.delivered_events += 1
                sub.delivered_bytes += len(line)
            out.append((client, line, client_tags))
        return out


def _encode(event: TraceEvent, attrs: dict, tags: tuple[str, ...], include_delta: bool) -> bytes:
    from .trace_model import encode_event

    projected = TraceEvent(
        chrono=event.chrono,
        port=event.port,
        attrs=attrs,
        delta=event.delta if include_delta else None,
        tags=tags,
    )
    return encode_event(projected)


# ---------------------------------------------------------------------------
# In-process runs (tests, bench comparisons)
# ---------------------------------------------------------------------------


def run_driven_in_process(
    program: Program,
    goal_text: str,
    client_filters: dict[str, list[FilterSpec]],
    mode: str = "driven",
    dispatch: bool = True,
) -> dict[str, list[bytes]]:
    """Run a goal through the pure pipeline; per-client encoded streams."""
    core = DriverCore(mode=mode, dispatch=dispatch)
    for client, specs in client_filters.items():
        for spec in specs:
            core.subscribe(client, spec)
    clients = list(client_filters.keys())
    engine = Engine(program, parse_term(goal_text))
    streams: dict[str, list[bytes]] = {c: [] for c in clients}
    while not engine.is_terminal():
        event = engine.step()
        for client, line, _tags in core.on_event(event, clients, engine.domains_for):
            streams[client].append(line)
    return streams


# ---------------------------------------------------------------------------
# TCP server
# ---------------------------------------------------------------------------


class _Client:
    def __init__(self, name: str, conn: LineSocket, outbox_size: int):
        self.name = name
        self.conn = conn
        self.outbox: queue.Queue = queue.Queue(maxsize=outbox_size)
        self.dead = False
        self.said_hello = False
        self.writer: Optional[threading.Thread] = None
        self.reader: Optional[threading.Thread] = None

    def enqueue(self, data: bytes) -> int:
        """Blocking put (backpressure=block); drops only once the peer died."""
        if self.dead:
            return 0
        self.outbox.put(data)
        return len(data)


_STOP = object()


class DriverServer:
    """Serves one engine run to any number of analyzer clients."""

    def __init__(
        self,
        program: Program,
        goal_text: str,
        config: DriverConfig,
        file_filters: Optional[list[FilterSpec]] = None,
        scenario: str = "",
        on_listening: Optional[Callable[[str, int], None]] = None,
    ):
        self.program = program
        self.goal_text = goal_text
        self.config = config
        self.file_filters = file_filters or []
        self.scenario = scenario or goal_text
        self.on_listening = on_listening

        self.core = DriverCore(mode=config.mode)
        self.control: queue.Queue = queue.Queue()
        self.clients: dict[str, _Client] = {}
        self.clients_lock = threading.Lock()
        # the start barrier is expressed as implicit pauses
        self.pause_count = config.wait_clients
        self.last_checkpoint: Optional[FullState] = None
        self.checkpoint_count = 0
        self._client_seq = 0
        self._accepting = True
        self._ended = False
        self._lsock: Optional[socket.socket] = None

    # -- lifecycle -------------------------------------------------------

    def serve(self) -> ServerReport:
        """Bind, accept clients, drive the engine to completion, report."""
        host, port = parse_endpoint(self.config.listen)
        try:
            lsock = socket.create_server((host, port))
        except OSError as exc:
            raise BindError(str(exc)) from exc
        self._lsock = lsock
        lsock.settimeout(0.1)
        real_host, real_port = lsock.getsockname()[:2]
        if self.on_listening is not None:
            self.on_listening(real_host, real_port)

        accept_thread = threading.Thread(target=self._accept_loop, name="driver-accept", daemon=True)
        accept_thread.start()
        try:
            return self._event_loop()
        finally:
            self._accepting = False
            lsock.close()
            accept_thread.join(timeout=2.0)

    def _accept_loop(self) -> None:
        while self._accepting:
            try:
                sock, _addr = self._lsock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self.clients_lock:
                self._client_seq += 1
                name = "client-%d" % self._client_seq
                client = _Client(name, LineSocket(sock), self.config.outbox_size)
                self.clients[name] = client
            client.writer = threading.Thread(target=self._writer_loop, args=(client,), daemon=True)
            client.writer.start()
            client.reader = threading.Thread(target=self._reader_loop, args=(client,), daemon=True)
            client.reader.start()

    def _writer_loop(self, client: _Client) -> None:
        while True:
            item = client.outbox.get()
            if item is _STOP:
                return
            if client.dead:
                continue  # keep draining so the engine never blocks on a corpse
            try:
                client.conn.sock.sendall(item)
            except OSError:
                client.dead = True

    def _reader_loop(self, client: _Client) -> None:
        try:
            for msg in client.conn.messages():
                self.control.put((client, msg))
                if msg.get("type") == "bye":
                    return
        except (ProtocolError, OSError) as exc:
            self.control.put((client, {"type": "_reader_error", "reason": str(exc)}))
        finally:
            self.control.put((client, {"type": "_gone"}))

    # -- the single-writer event loop -------------------------------------

    def _event_loop(self) -> ServerReport:
        report = ServerReport(scenario=self.scenario, mode=self.config.mode)
        wall0 = time.perf_counter_ns()

        engine = Engine(self.program, parse_term(self.goal_text), trace=self.config.mode != "off")
        self.engine = engine
        self.last_checkpoint = engine.snapshot() if self.config.mode != "off" else None
        if self.config.wait_clients == 0:
            self._grace_drain(engine)

        events = 0
        t_engine = 0
        t_com = 0
        while True:
            self._drain_control(engine)
            while self.pause_count > 0:
                try:
                    client, msg = self.control.get(timeout=0.05)
                except queue.Empty:
                    continue
                self._handle_control(client, msg, engine)
            if engine.is_terminal():
                break
            t0 = time.perf_counter_ns()
            event = engine.step()
            t_engine += time.perf_counter_ns() - t0
            events += 1

            if self.core.mode != "off":
                with self.clients_lock:
                    live = [name for name, c in self.clients.items() if c.said_hello and not c.dead]
                deliveries = self.core.on_event(event, live, engine.domains_for)
                if deliveries:
                    t0 = time.perf_counter_ns()
                    with self.clients_lock:
                        for cname, line, _tags in deliveries:
                            c = self.clients.get(cname)
                            if c is not None:
                                report.bytes_total += c.enqueue(line)
                                report.events_delivered += 1
                    t_com += time.perf_counter_ns() - t0
                if self.config.checkpoint_every > 0 and events % self.config.checkpoint_every == 0:
                    self.last_checkpoint = engine.snapshot()
                    self.checkpoint_count += 1

        from .protocol import encode_message

        end_msg = {"type": "end", "chrono": engine.chrono, "solutions": engine.solutions}
        self._ended = True
        with self.clients_lock:
            for client in self.clients.values():
                if client.said_hello and not client.dead:
                    client.enqueue(encode_message(end_msg))

        # linger: the run is over but control traffic (pause/snapshot/bye)
        # still deserves replies until every client has gone away
        deadline = time.monotonic() + self.config.linger_s
        while time.monotonic() < deadline:
            with self.clients_lock:
                if all(c.dead or not c.said_hello for c in self.clients.values()):
                    break
            try:
                client, msg = self.control.get(timeout=0.05)
            except queue.Empty:
                continue
            self._handle_control(client, msg, engine)

        with self.clients_lock:
            for client in self.clients.values():
                client.outbox.put(_STOP)
        for client in list(self.clients.values()):
            if client.writer is not None:
                client.writer.join(timeout=5.0)
            client.conn.close()

        report.wall_ns = time.perf_counter_ns() - wall0
        report.t_engine_ns = t_engine
        if self.config.mode == "off":
            report.t_prog_ns = t_engine
        report.t_cond_ns = self.core.t_cond_ns
        report.t_extract_ns = self.core.t_extract_ns
        report.t_encode_com_ns = self.core.t_encode_ns + t_com
        report.events_emitted = events
        report.predicate_evaluations = self.core.matcher.counters.predicate_evaluations
        report.solutions = engine.solutions
        report.final_chrono = engine.chrono
        report.checkpoints = self.checkpoint_count
        report.per_subscription = {
            "%s/%s" % (sub.client, sub.spec.id): {
                "events": sub.delivered_events,
                "bytes": sub.delivered_bytes,
            }
            for sub in self.core.subscriptions.values()
        }
        with self.clients_lock:
            report.clients = self._client_seq
        return report

    def _grace_drain(self, engine: Engine) -> None:
        deadline = time.monotonic() + self.config.accept_grace_s
        while time.monotonic() < deadline:
            try:
                client, msg = self.control.get(timeout=0.02)
            except queue.Empty:
                continue
            self._handle_control(client, msg, engine)

    def _drain_control(self, engine: Optional[Engine]) -> None:
        while True:
            try:
                client, msg = self.control.get_nowait()
            except queue.Empty:
                return
            self._handle_control(client, msg, engine)

    # -- control messages (always at event boundaries) --------------------

    def _handle_control(self, client: _Client, msg: dict, engine: Optional[Engine]) -> None:
        from .protocol import encode_message

        mtype = msg.get("type")
        if mtype in ("_gone", "_reader_error", "bye"):
            client.dead = True
            self.core.drop_client(client.name)
            return
        if mtype == "hello":
            client.said_hello = True
            client.enqueue(encode_message({"type": "ack", "protocol_version": PROTOCOL_VERSION}))
            for spec in self.file_filters:
                try:
                    self.core.subscribe(client.name, spec)
                except DuplicateId:
                    pass
            if self._ended and engine is not None:
                client.enqueue(
                    encode_message({"type": "end", "chrono": engine.chrono, "solutions": engine.solutions})
                )
            return
        if not client.said_hello:
            client.enqueue(encode_message({"type": "err", "reason": "hello required"}))
            return
        if mtype == "subscribe":
            try:
                specs = parse_filters(msg.get("source", ""))
                if len(specs) != 1:
                    raise FilterParseError("subscribe expects exactly one filter", 1, 1)
                self.core.subscribe(client.name, specs[0])
                client.enqueue(encode_message({"type": "ack", "id": specs[0].id}))
            except FilterParseError as exc:
                client.enqueue(encode_message({"type": "err", "reason": str(exc)}))
            except DuplicateId as exc:
                client.enqueue(encode_message({"type": "err", "reason": "duplicate filter id %s" % exc}))
            return
        if mtype == "unsubscribe":
            if self.core.unsubscribe(client.name, msg.get("id", "")):
                client.enqueue(encode_message({"type": "ack", "id": msg.get("id")}))
            else:
                client.enqueue(encode_message({"type": "err", "reason": "no such subscription"}))
            return
        if mtype == "pause":
            self.pause_count += 1
            chrono = engine.chrono if engine is not None else 0
            client.enqueue(encode_message({"type": "ack", "op": "pause", "chrono": chrono}))
            return
        if mtype == "resume":
            if self.pause_count == 0:
                client.enqueue(encode_message({"type": "err", "reason": "resume without pause"}))
                return
            self.pause_count -= 1
            chrono = engine.chrono if engine is not None else 0
            client.enqueue(encode_message({"type": "ack", "op": "resume", "chrono": chrono}))
            return
        if mtype == "snapshot_req":
            state = self._snapshot_state(engine)
            client.enqueue(
                encode_message({"type": "snapshot", "chrono": state.chrono, "state": state.to_json()})
            )
            return
        client.enqueue(encode_message({"type": "err", "reason": "unknown message type %r" % mtype}))

    def _snapshot_state(self, engine: Optional[Engine]) -> FullState:
        # paused (or not yet started): the boundary state is directly
        # addressable; mid-run requests fall back to the last recovery point
        if engine is not None and (self.pause_count > 0 or engine.chrono == 0):
            state = engine.snapshot()
            self.last_checkpoint = state
            return state
        if self.last_checkpoint is not None:
            return self.last_checkpoint
        if engine is not None:
            return engine.snapshot()
        raise RuntimeError("no engine state available")


def serve(
    program: Program,
    goal_text: str,
    config: DriverConfig,
    file_filters: Optional[list[FilterSpec]] = None,
    scenario: str = "",
    on_listening: Optional[Callable[[str, int], None]] = None,
) -> ServerReport:
    """Run one driven engine session to completion."""
    server = DriverServer(program, goal_text, config, file_filters, scenario, on_listening)
    return server.serve()
