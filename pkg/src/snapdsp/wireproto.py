"""LSP-framed JSON-RPC codec for the proof-state snapshot methods.

Frames follow the LSP base protocol::

    Content-Length: <n>\\r\\n
    \\r\\n
    <n bytes of UTF-8 JSON>

Only document-open plus the three snapshot methods are recognised.
"""

from __future__ import annotations

import io
import json
import socket
import threading
from dataclasses import dataclass
from typing import Any, BinaryIO, Callable, Dict, List, Optional, Union

PING = "$/lean/dspSnapshotPing"
CAPTURE = "$/lean/dspSnapshotCapture"
BRANCH = "$/lean/dspSnapshotBranch"
DID_OPEN = "textDocument/didOpen"

SNAPSHOT_METHODS = (PING, CAPTURE, BRANCH)
KNOWN_METHODS = frozenset(SNAPSHOT_METHODS + (DID_OPEN,))

# JSON-RPC / LSP error codes
PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603
# server-defined range -32000..-32099
UNKNOWN_DOCUMENT = -32001
DOCUMENT_NOT_OPEN = -32002
POSITION_NOT_A_SORRY = -32003
UNKNOWN_SNAPSHOT = -32004

HEADER_ENCODING = "ascii"
_CONTENT_LENGTH = b"content-length"


class WireError(Exception):
    """Base class for codec failures."""


class MalformedHeader(WireError):
    pass


class TruncatedBody(WireError):
    pass


class DecodeError(WireError):
    pass


class UnknownMethod(WireError):
    pass


class StreamClosed(WireError, EOFError):
    """Clean end of stream at a header boundary."""


class RpcError(Exception):
    """An error response received from (or raised inside) a server."""

    def __init__(self, code: int, message: str, data: Any = None):
        self.code = code
        self.message = message
        self.data = data
        super().__init__(f"[{code}] {message}")

    def to_dict(self) -> Dict[str, Any]:
        err: Dict[str, Any] = {"code": self.code, "message": self.message}
        if self.data is not None:
            err["data"] = self.data
        return err


@dataclass
class RpcEnvelope:
    """One JSON-RPC message: request, notification, or response.

    ``virtual_time`` is a simulator extension carried as ``virtualTime`` on
    responses; clients of a real server never see it and ignore it if present.
    """

    id: Optional[Union[int, str]] = None
    method: Optional[str] = None
    params: Any = None
    result: Any = None
    error: Optional[Dict[str, Any]] = None
    virtual_time: Optional[float] = None

    @property
    def is_request(self) -> bool:
        return self.method is not None and self.id is not None

    @property
    def is_notification(self) -> bool:
        return self.method is not None and self.id is None

    @property
    def is_response(self) -> bool:
        return self.method is None and self.id is not None

    def to_dict(self) -> Dict[str, Any]:
        msg: Dict[str, Any] = {"jsonrpc": "2.0"}
        if self.id is not None:
            msg["id"] = self.id
        if self.method is not None:
            msg["method"] = self.method
            if self.params is not None:
                msg["params"] = self.params
            return msg
        if self.error is not None:
            msg["error"] = self.error
        else:
            msg["result"] = self.result
        if self.virtual_time is not None:
            msg["virtualTime"] = self.virtual_time
        return msg

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=False).encode("utf-8")

    @classmethod
    def from_dict(cls, msg: Dict[str, Any]) -> "RpcEnvelope":
        if not isinstance(msg, dict):
            raise DecodeError(f"expected a JSON object, got {type(msg).__name__}")
        # unknown members are ignored for forward compatibility
        return cls(
            id=msg.get("id"),
            method=msg.get("method"),
            params=msg.get("params"),
            result=msg.get("result"),
            error=msg.get("error"),
            virtual_time=msg.get("virtualTime"),
        )

    def raise_for_error(self) -> Any:
        if self.error is not None:
            raise RpcError(self.error.get("code", INTERNAL_ERROR), self.error.get("message", ""), self.error.get("data"))
        return self.result


def frame_message(payload: bytes) -> bytes:
    """Prefix ``payload`` with its Content-Length header."""
    return b"Content-Length: %d\r\n\r\n" % len(payload) + payload


def read_frame(stream: BinaryIO) -> bytes:
    """Consume exactly one framed message from ``stream`` and return its body."""
    length: Optional[int] = None
    saw_header = False
    while True:
        line = stream.readline()
        if not line:
            if saw_header:
                raise TruncatedBody("stream ended inside the header block")
            raise StreamClosed("stream closed")
        saw_header = True
        if line in (b"\r\n", b"\n"):
            break
        name, sep, value = line.partition(b":")
        if not sep:
            raise MalformedHeader(f"header line without ':': {line!r}")
        if name.strip().lower() == _CONTENT_LENGTH:
            text = value.strip()
            if not text.isdigit():
                raise MalformedHeader(f"non-numeric Content-Length: {text!r}")
            length = int(text)
    if length is None:
        raise MalformedHeader("missing Content-Length header")
    chunks = []
    remaining = length
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise TruncatedBody(f"declared {length} bytes, got {length - remaining}")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def decode_payload(body: bytes) -> RpcEnvelope:
    try:
        msg = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(str(exc)) from exc
    return RpcEnvelope.from_dict(msg)


def parse_frame(stream: BinaryIO) -> RpcEnvelope:
    return decode_payload(read_frame(stream))


def parse_frames(data: bytes) -> List[RpcEnvelope]:
    """Decode every complete frame in ``data``."""
    stream = io.BytesIO(data)
    out = []
    while stream.tell() < len(data):
        out.append(parse_frame(stream))
    return out


def encode_request(method: str, params: Any, id: Optional[int]) -> RpcEnvelope:
    """Build a request envelope (or a notification when ``id`` is None)."""
    if method not in KNOWN_METHODS:
        raise UnknownMethod(method)
    return RpcEnvelope(id=id, method=method, params=params if params is not None else {})


def encode_response(id: Union[int, str], result: Any, virtual_time: Optional[float] = None) -> RpcEnvelope:
    return RpcEnvelope(id=id, result=result, virtual_time=virtual_time)


def encode_error(id: Union[int, str, None], code: int, message: str, virtual_time: Optional[float] = None) -> RpcEnvelope:
    return RpcEnvelope(id=id, error={"code": code, "message": message}, virtual_time=virtual_time)


def method_not_found(id: Union[int, str, None], method: str, virtual_time: Optional[float] = None) -> RpcEnvelope:
    return encode_error(id, METHOD_NOT_FOUND, f"method not found: {method}", virtual_time)


# -- client connections ------------------------------------------------------

Callback = Callable[[RpcEnvelope], None]


class Connection:
    """Client side of a JSON-RPC connection.

    Requests are asynchronous: ``request`` returns the allocated id and the
    callback fires with the response envelope. ``drain`` blocks until every
    outstanding request has been answered. Ids increase monotonically.
    """

    def __init__(self) -> None:
        self._next_id = 1
        self._pending: Dict[Union[int, str], Callback] = {}
        self.last_virtual_time: Optional[float] = None

    def _allocate_id(self) -> int:
        rid = self._next_id
        self._next_id += 1
        return rid

    def request(self, method: str, params: Any, callback: Callback) -> int:
        rid = self._allocate_id()
        env = encode_request(method, params, rid)
        self._pending[rid] = callback
        self._send(frame_message(env.to_bytes()))
        return rid

    def notify(self, method: str, params: Any) -> None:
        self._send(frame_message(encode_request(method, params, None).to_bytes()))

    def call(self, method: str, params: Any) -> RpcEnvelope:
        """Synchronous request: send, drain, return the response."""
        box: List[RpcEnvelope] = []
        self.request(method, params, box.append)
        self.drain()
        if not box:
            raise StreamClosed(f"no response to {method}")
        return box[0]

    def _deliver(self, data: bytes) -> None:
        for env in parse_frames(data):
            self._dispatch(env)

    def _dispatch(self, env: RpcEnvelope) -> None:
        if env.virtual_time is not None:
            self.last_virtual_time = env.virtual_time
        callback = self._pending.pop(env.id, None)
        if callback is not None:
            callback(env)

    @property
    def outstanding(self) -> int:
        return len(self._pending)

    def _send(self, data: bytes) -> None:
        raise NotImplementedError

    def drain(self) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class PipeConnection(Connection):
    """In-process byte pipe to a server exposing ``feed(bytes, reply)``.

    ``drain`` hands control to the server's ``run_until_idle``; responses are
    delivered (and callbacks may issue follow-up requests) at the virtual
    instant the server completes them.
    """

    def __init__(self, server: Any):
        super().__init__()
        self.server = server

    def _send(self, data: bytes) -> None:
        self.server.feed(data, self._deliver)

    def drain(self) -> None:
        self.server.run_until_idle()


class TcpConnection(Connection):
    """Blocking TCP client. Each request waits for its response before returning."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        super().__init__()
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._reader = self.sock.makefile("rb")
        self._lock = threading.Lock()

    def _send(self, data: bytes) -> None:
        with self._lock:
            self.sock.sendall(data)

    def request(self, method: str, params: Any, callback: Callback) -> int:
        rid = super().request(method, params, callback)
        while rid in self._pending:
            self._dispatch(parse_frame(self._reader))
        return rid

    def drain(self) -> None:
        while self._pending:
            self._dispatch(parse_frame(self._reader))

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self.sock.close()
