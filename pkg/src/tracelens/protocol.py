"""Wire protocol helpers: newline-delimited JSON messages over TCP.

Protocol version 1. Message ``type`` is one of hello, subscribe,
unsubscribe, snapshot_req, pause, resume, bye (client to server) and ack,
err, event, snapshot, end (server to client). The bit-exact event and state
encodings live in trace_model; this module only frames and routes dicts.
"""

from __future__ import annotations

import json
import socket
from typing import Iterator, Optional

PROTOCOL_VERSION = "1"

CLIENT_TYPES = frozenset({"hello", "subscribe", "unsubscribe", "snapshot_req", "pause", "resume", "bye"})
SERVER_TYPES = frozenset({"ack", "err", "event", "snapshot", "end"})


class ProtocolError(Exception):
    pass


def encode_message(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


def decode_message(line: bytes) -> dict:
    try:
        data = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("bad message line: %s" % exc) from exc
    if not isinstance(data, dict) or "type" not in data:
        raise ProtocolError("message must be an object with a type")
    return data


class LineSocket:
    """Blocking line-framed socket wrapper used by both peers."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = b""

    def send(self, msg: dict) -> int:
        data = encode_message(msg)
        self.sock.sendall(data)
        return len(data)

    def recv_line(self) -> Optional[bytes]:
        """One full line without the newline, or None at EOF."""
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl]
                self._buf = self._buf[nl + 1 :]
                return line
            chunk = self.sock.recv(65536)
            if not chunk:
                return None if not self._buf else self._take_rest()
            self._buf += chunk

    def _take_rest(self) -> bytes:
        line, self._buf = self._buf, b""
        return line

    def recv_message(self) -> Optional[dict]:
        line = self.recv_line()
        if line is None:
            return None
        return decode_message(line)

    def messages(self) -> Iterator[dict]:
        while True:
            msg = self.recv_message()
            if msg is None:
                return
            yield msg

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError("endpoint must be HOST:PORT, got %r" % text)
    return host, int(port)
