"""Length-prefixed wire protocol.

Frame layout (bit-exact): [4-byte big-endian unsigned length][UTF-8 JSON payload].
The payload is one Message with fields in the fixed order kind, request_id,
body. A connection may carry several frames back to back.
"""

from __future__ import annotations

import enum
import json
import socket
import socketserver
import struct
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Protocol

from .errors import BindFailure, FrameTooLarge, MalformedPayload, TruncatedFrame
from .logs import get_logger
from .models import AgentDescriptor, ResultItem, SemanticQuery
from .utils import parse_endpoint

logger = get_logger(__name__)

HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 1024 * 1024

_FIELDS = ["kind", "request_id", "body"]


class MessageKind(enum.Enum):
    QUERY = "QUERY"
    RESULTS = "RESULTS"
    ERROR = "ERROR"
    REGISTER = "REGISTER"
    ACK = "ACK"
    PING = "PING"
    PONG = "PONG"


@dataclass(frozen=True)
class ErrorBody:
    code: str
    text: str


Body = SemanticQuery | tuple[ResultItem, ...] | ErrorBody | AgentDescriptor | None


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    request_id: str
    body: Body = None

    def reply(self, kind: MessageKind, body: Body = None) -> Message:
        """A message of `kind` echoing this message's request_id."""
        return Message(kind, self.request_id, body)


def _body_to_wire(kind: MessageKind, body: Body) -> object:
    if kind is MessageKind.QUERY:
        assert isinstance(body, SemanticQuery)
        return body.to_wire()
    if kind is MessageKind.RESULTS:
        return [item.to_wire() for item in body]  # type: ignore[union-attr]
    if kind is MessageKind.ERROR:
        assert isinstance(body, ErrorBody)
        return {"code": body.code, "text": body.text}
    if kind is MessageKind.REGISTER:
        assert isinstance(body, AgentDescriptor)
        return body.to_wire()
    return None


def _body_from_wire(kind: MessageKind, raw: object) -> Body:
    if kind is MessageKind.QUERY:
        return SemanticQuery.from_wire(raw)
    if kind is MessageKind.RESULTS:
        if not isinstance(raw, list):
            raise ValueError("RESULTS body must be a list")
        return tuple(ResultItem.from_wire(i) for i in raw)
    if kind is MessageKind.ERROR:
        if not (isinstance(raw, dict) and list(raw) == ["code", "text"]
                and isinstance(raw["code"], str) and isinstance(raw["text"], str)):
            raise ValueError("ERROR body must be {code, text}")
        return ErrorBody(raw["code"], raw["text"])
    if kind is MessageKind.REGISTER:
        return AgentDescriptor.from_wire(raw)
    if raw is not None:
        raise ValueError(f"{kind.value} carries no body")
    return None


def encode_payload(message: Message) -> bytes:
    doc = {
        "kind": message.kind.value,
        "request_id": message.request_id,
        "body": _body_to_wire(message.kind, message.body),
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def decode_payload(payload: bytes) -> Message:
    try:
        doc = json.loads(payload.decode("utf-8"))
        if not isinstance(doc, dict) or list(doc) != _FIELDS:
            raise ValueError("payload must be an object with fields kind, request_id, body")
        if not isinstance(doc["request_id"], str):
            raise ValueError("request_id must be a string")
        kind = MessageKind(doc["kind"])
        return Message(kind, doc["request_id"], _body_from_wire(kind, doc["body"]))
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError, ValueError, TypeError, OverflowError) as e:
        raise MalformedPayload(f"Malformed payload: {e}") from None


def encode_frame(message: Message, max_frame_bytes: int = MAX_FRAME_BYTES) -> bytes:
    payload = encode_payload(message)
    if len(payload) > max_frame_bytes:
        raise FrameTooLarge(len(payload), max_frame_bytes)
    return HEADER.pack(len(payload)) + payload


class Reader(Protocol):
    def read(self, size: int) -> bytes: ...


def _read_exact(stream: Reader, size: int) -> bytes:
    chunks = []
    got = 0
    while got < size:
        chunk = stream.read(size - got)
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(stream: Reader, max_frame_bytes: int = MAX_FRAME_BYTES) -> Message | None:
    """Read one frame. Returns None on a clean end of stream before any header byte."""
    header = _read_exact(stream, HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise TruncatedFrame(HEADER.size, len(header))
    (length,) = HEADER.unpack(header)
    if length > max_frame_bytes:
        raise FrameTooLarge(length, max_frame_bytes)
    payload = _read_exact(stream, length)
    if len(payload) < length:
        raise TruncatedFrame(length, len(payload))
    return decode_payload(payload)


def decode_frame(stream: Reader, max_frame_bytes: int = MAX_FRAME_BYTES) -> Message:
    """Read exactly one frame; bytes after it stay in the stream."""
    message = read_frame(stream, max_frame_bytes)
    if message is None:
        raise TruncatedFrame(HEADER.size, 0)
    return message


# ---------------------------------------------------------------------------
# Client side
# ---------------------------------------------------------------------------

class _DeadlineReader:
    """Socket reader that never blocks past an absolute monotonic deadline."""

    def __init__(self, sock: socket.socket, deadline: float):
        self.sock = sock
        self.deadline = deadline

    def read(self, size: int) -> bytes:
        remaining = self.deadline - time.monotonic()
        if remaining <= 0:
            raise TimeoutError("deadline passed")
        self.sock.settimeout(remaining)
        return self.sock.recv(min(size, 65536))


def exchange(
    endpoint: str, message: Message, timeout_s: float, max_frame_bytes: int = MAX_FRAME_BYTES,
) -> Message:
    """Send one message and wait for one reply, all within timeout_s.

    Raises OSError (connect/transport), TimeoutError or a FrameError.
    """
    deadline = time.monotonic() + timeout_s
    host, port = parse_endpoint(endpoint)
    with socket.create_connection((host, port), timeout=timeout_s) as sock:
        sock.settimeout(max(deadline - time.monotonic(), 0.001))
        sock.sendall(encode_frame(message, max_frame_bytes))
        return decode_frame(_DeadlineReader(sock, deadline), max_frame_bytes)


# ---------------------------------------------------------------------------
# Server side
# ---------------------------------------------------------------------------

Reply = Message | bytes | None


class FrameHandler(ABC):
    """Answers decoded messages on a FrameServer.

    Returning a Message sends it, raw bytes are written as-is, None drops the
    connection.
    """

    name: str = "frame-handler"

    @abstractmethod
    def handle(self, message: Message) -> Reply: ...


class _ConnectionHandler(socketserver.StreamRequestHandler):
    server: FrameServer

    def handle(self) -> None:
        peer = "%s:%s" % self.client_address[:2]
        while True:
            try:
                message = read_frame(self.rfile, self.server.max_frame_bytes)
            except MalformedPayload as e:
                logger.info("%s: malformed frame from %s: %s", self.server.handler.name, peer, e)
                self._send(Message(MessageKind.ERROR, "", ErrorBody("malformed", str(e))))
                return
            except (FrameTooLarge, TruncatedFrame, OSError) as e:
                logger.info("%s: dropping %s: %s", self.server.handler.name, peer, e)
                return
            if message is None:
                return
            reply = self.server.handler.handle(message)
            if reply is None:
                return
            if not self._send(reply):
                return

    def _send(self, reply: Message | bytes) -> bool:
        data = reply if isinstance(reply, bytes) else encode_frame(reply, self.server.max_frame_bytes)
        try:
            self.wfile.write(data)
            self.wfile.flush()
            return True
        except OSError:
            return False


class FrameServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server speaking the frame protocol, one thread per connection."""

    daemon_threads = True
    allow_reuse_address = True
    block_on_close = False

    def __init__(self, host: str, port: int, handler: FrameHandler, max_frame_bytes: int = MAX_FRAME_BYTES):
        self.handler = handler
        self.max_frame_bytes = max_frame_bytes
        try:
            super().__init__((host, port), _ConnectionHandler)
        except OSError as e:
            raise BindFailure(f"Cannot bind {host}:{port}: {e}") from e

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"
