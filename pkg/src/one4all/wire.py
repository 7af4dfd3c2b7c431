"""TCP hand-off: length-prefixed JSON frames between planner and executor hosts.

A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
object. The server only ever answers; it never sends a frame that is not the
reply to exactly one request.
"""

from __future__ import annotations

import hashlib
import json
import re
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Union

from one4all.plan import MissionPlan, serialize_plan

HEADER = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024
DEFAULT_PORT = 7447
DEFAULT_TIMEOUT = 10.0
REPORT_STATUSES = ("completed", "failed", "unknown")


class WireError(Exception):
    pass


class FrameTooLarge(WireError):
    pass


class MalformedPayload(WireError):
    pass


class ChecksumMismatch(WireError):
    def __init__(self, message: str, mission_id: str = ""):
        super().__init__(message)
        self.mission_id = mission_id


class ConnectionLost(WireError):
    pass


class Timeout(WireError):
    pass


def plan_checksum(plan_xml: str) -> str:
    # surrogateescape keeps undecodable bytes from a corrupted frame distinct
    return hashlib.sha256(plan_xml.encode("utf-8", "surrogateescape")).hexdigest()


def _need_id(mission_id: str) -> None:
    if not isinstance(mission_id, str) or not mission_id:
        raise ValueError("mission_id must be a non-empty string")


@dataclass(frozen=True)
class SubmitPlan:
    mission_id: str
    plan_xml: str
    checksum: str

    def __post_init__(self) -> None:
        _need_id(self.mission_id)
        if plan_checksum(self.plan_xml) != self.checksum:
            raise ChecksumMismatch(f"plan checksum mismatch for mission {self.mission_id}", self.mission_id)

    @classmethod
    def create(cls, mission_id: str, plan_xml: str) -> "SubmitPlan":
        return cls(mission_id, plan_xml, plan_checksum(plan_xml))


@dataclass(frozen=True)
class Ack:
    mission_id: str
    accepted: bool
    reason: str | None = None

    def __post_init__(self) -> None:
        _need_id(self.mission_id)


@dataclass(frozen=True)
class FetchReport:
    mission_id: str

    def __post_init__(self) -> None:
        _need_id(self.mission_id)


@dataclass(frozen=True)
class Report:
    mission_id: str
    status: str
    trace: list[dict[str, Any]] = field(default_factory=list)

    def __post_init__(self) -> None:
        _need_id(self.mission_id)
        if self.status not in REPORT_STATUSES:
            raise ValueError(f"report status must be one of {REPORT_STATUSES}")


Message = Union[SubmitPlan, Ack, FetchReport, Report]

_TYPES: dict[str, type] = {"submit_plan": SubmitPlan, "ack": Ack, "fetch_report": FetchReport, "report": Report}
_NAMES = {cls: name for name, cls in _TYPES.items()}


def _to_json(msg: Message) -> dict[str, Any]:
    if isinstance(msg, SubmitPlan):
        return {"type": "submit_plan", "mission_id": msg.mission_id, "plan_xml": msg.plan_xml,
                "checksum": msg.checksum}
    if isinstance(msg, Ack):
        return {"type": "ack", "mission_id": msg.mission_id, "accepted": msg.accepted, "reason": msg.reason}
    if isinstance(msg, FetchReport):
        return {"type": "fetch_report", "mission_id": msg.mission_id}
    if isinstance(msg, Report):
        return {"type": "report", "mission_id": msg.mission_id, "status": msg.status, "trace": msg.trace}
    raise TypeError(f"not a wire message: {type(msg).__name__}")


def encode(msg: Message) -> bytes:
    payload = json.dumps(_to_json(msg), sort_keys=True, separators=(",", ":"),
                         ensure_ascii=False).encode("utf-8", "surrogateescape")
    if len(payload) > MAX_FRAME:
        raise FrameTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(payload)) + payload


def _field(obj: dict, name: str, kind) -> Any:
    value = obj.get(name)
    if not isinstance(value, kind):
        raise MalformedPayload(f"field {name!r} missing or of the wrong type")
    return value


# Shape of an encoded SubmitPlan (keys are sorted). If the JSON is broken but
# this frame is intact, the damage sits inside the plan text itself.
_SUBMIT_SHAPE = re.compile(rb'\{"checksum":"[0-9a-f]{64}","mission_id":"((?:[^"\\]|\\.)*)",'
                           rb'"plan_xml":".*","type":"submit_plan"\}', re.DOTALL)


def decode_payload(payload: bytes) -> Message:
    try:
        obj = json.loads(payload.decode("utf-8", "surrogateescape"), strict=False)
    except ValueError as exc:
        m = _SUBMIT_SHAPE.fullmatch(payload)
        if m:
            try:
                mission_id = json.loads(b'"' + m.group(1) + b'"')
            except ValueError:
                mission_id = ""
            raise ChecksumMismatch("plan text was damaged in transit", mission_id) from None
        raise MalformedPayload(f"payload is not JSON: {exc}") from None
    if not isinstance(obj, dict) or obj.get("type") not in _TYPES:
        raise MalformedPayload("payload must be an object with a known 'type'")
    kind = obj["type"]
    mission_id = _field(obj, "mission_id", str)
    try:
        if kind == "submit_plan":
            return SubmitPlan(mission_id, _field(obj, "plan_xml", str), _field(obj, "checksum", str))
        if kind == "ack":
            reason = obj.get("reason")
            if reason is not None and not isinstance(reason, str):
                raise MalformedPayload("field 'reason' must be a string or null")
            return Ack(mission_id, _field(obj, "accepted", bool), reason)
        if kind == "fetch_report":
            return FetchReport(mission_id)
        return Report(mission_id, _field(obj, "status", str), _field(obj, "trace", list))
    except ValueError as exc:
        raise MalformedPayload(str(exc)) from None


def decode(data: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(data) < HEADER.size:
        raise MalformedPayload("frame shorter than its header")
    (length,) = HEADER.unpack_from(data)
    if length > MAX_FRAME:
        raise FrameTooLarge(f"frame declares {length} bytes, limit is {MAX_FRAME}")
    if len(data) - HEADER.size != length:
        raise MalformedPayload(f"frame declares {length} bytes but carries {len(data) - HEADER.size}")
    return decode_payload(bytes(data[HEADER.size:]))


class FrameDecoder:
    """Incremental decoder; feed it bytes as they arrive."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= HEADER.size:
            (length,) = HEADER.unpack_from(self._buf)
            if length > MAX_FRAME:
                raise FrameTooLarge(f"frame declares {length} bytes, limit is {MAX_FRAME}")
            end = HEADER.size + length
            if len(self._buf) < end:
                break
            payload = bytes(self._buf[HEADER.size:end])
            del self._buf[:end]
            out.append(decode_payload(payload))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        return addr or "127.0.0.1", DEFAULT_PORT
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ValueError(f"bad address {addr!r}, expected HOST:PORT") from None


# -- socket I/O ------------------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionLost("peer closed the connection")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    header = _recv_exact(sock, HEADER.size)
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameTooLarge(f"frame declares {length} bytes, limit is {MAX_FRAME}")
    return header + _recv_exact(sock, length)


class Client:
    """Blocking request/response client. One connection, opened lazily."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT, timeout: float = DEFAULT_TIMEOUT):
        self.host, self.port, self.timeout = host, port, timeout
        self._sock: socket.socket | None = None

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def connect(self) -> None:
        if self._sock is not None:
            return
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except socket.timeout:
            raise Timeout(f"connecting to {self.host}:{self.port} timed out") from None
        except OSError as exc:
            raise ConnectionLost(f"cannot connect to {self.host}:{self.port}: {exc}") from None

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def request(self, msg: Message) -> Message:
        self.connect()
        assert self._sock is not None
        try:
            self._sock.sendall(encode(msg))
            return decode(read_frame(self._sock))
        except socket.timeout:
            self.close()
            raise Timeout(f"no reply within {self.timeout:g} s") from None
        except ConnectionLost:
            self.close()
            raise
        except OSError as exc:
            self.close()
            raise ConnectionLost(str(exc)) from None

    def submit(self, plan: MissionPlan) -> Ack:
        return self.submit_xml(plan.mission_id, serialize_plan(plan))

    def submit_xml(self, mission_id: str, plan_xml: str) -> Ack:
        reply = self.request(SubmitPlan.create(mission_id, plan_xml))
        if not isinstance(reply, Ack):
            raise MalformedPayload(f"expected ack, got {_NAMES[type(reply)]}")
        return reply

    def fetch_report(self, mission_id: str) -> Report:
        reply = self.request(FetchReport(mission_id))
        if not isinstance(reply, Report):
            raise MalformedPayload(f"expected report, got {_NAMES[type(reply)]}")
        return reply


Handler = Callable[[Message], Message]


class _ConnectionHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        respond: Handler = self.server.respond  # type: ignore[attr-defined]
        sock: socket.socket = self.request
        self.server.track(sock, True)  # type: ignore[attr-defined]
        try:
            self._serve(sock, respond)
        finally:
            self.server.track(sock, False)  # type: ignore[attr-defined]

    def _serve(self, sock: socket.socket, respond: Handler) -> None:
        while True:
            try:
                frame = read_frame(sock)
            except (ConnectionLost, FrameTooLarge, OSError):
                return
            try:
                msg = decode(frame)
            except ChecksumMismatch as exc:
                if not exc.mission_id:
                    return
                reply: Message = Ack(exc.mission_id, False, str(exc))
            except WireError:
                return  # nothing sensible to answer; drop the connection
            else:
                if isinstance(msg, (Ack, Report)):
                    return
                reply = respond(msg)
            try:
                sock.sendall(encode(reply))
            except OSError:
                return


class WireServer(socketserver.ThreadingTCPServer):
    """Threaded server that answers every request frame with one reply frame."""

    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, addr: tuple[str, int], respond: Handler):
        self.respond = respond
        super().__init__(addr, _ConnectionHandler)
        self._thread: threading.Thread | None = None
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()

    def track(self, sock: socket.socket, alive: bool) -> None:
        with self._conns_lock:
            (self._conns.add if alive else self._conns.discard)(sock)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> "WireServer":
        self._thread = threading.Thread(target=self.serve_forever, name="one4all-wire", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        with self._conns_lock:
            for sock in list(self._conns):
                try:
                    sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
        if self._thread is not None:
            self._thread.join(timeout=5)
