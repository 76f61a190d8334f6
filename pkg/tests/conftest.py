from __future__ import annotations

import sys
import threading
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tracelens.corpus import BENCH_SOURCE
from tracelens.driver import DriverConfig, serve
from tracelens.engine import Engine, load_program, parse_term


def run_events(source: str, goal: str, max_events: int | None = None):
    """Run a goal in process and return (engine, events)."""
    engine = Engine(load_program(source), parse_term(goal))
    events = []
    while not engine.is_terminal():
        events.append(engine.step())
        if max_events is not None and len(events) >= max_events:
            break
    return engine, events


@pytest.fixture(scope="session")
def bench2():
    """The reference run: bench(2), the engine and its 25 events."""
    return run_events(BENCH_SOURCE, "bench(2)")


class ServerHandle:
    def __init__(self, thread: threading.Thread, endpoint: str, box: dict):
        self.thread = thread
        self.endpoint = endpoint
        self._box = box

    @property
    def report(self):
        self.thread.join(timeout=30)
        assert not self.thread.is_alive(), "server did not finish"
        if "error" in self._box:
            raise self._box["error"]
        return self._box["report"]


def start_server(source: str, goal: str, wait_clients: int, mode: str = "driven", **kw) -> ServerHandle:
    """Spin up a DriverServer on an ephemeral port in a daemon thread."""
    program = load_program(source)
    config = DriverConfig(mode=mode, listen="127.0.0.1:0", wait_clients=wait_clients, **kw)
    box: dict = {}
    ready = threading.Event()

    def on_listening(host: str, port: int) -> None:
        box["endpoint"] = "%s:%d" % (host, port)
        ready.set()

    def main() -> None:
        try:
            box["report"] = serve(program, goal, config, on_listening=on_listening)
        except BaseException as exc:  # surfaced via .report
            box["error"] = exc
            ready.set()

    thread = threading.Thread(target=main, daemon=True)
    thread.start()
    assert ready.wait(10), "server did not start"
    if "error" in box:
        raise box["error"]
    return ServerHandle(thread, box["endpoint"], box)
