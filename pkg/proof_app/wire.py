"""
Framed message transport between prover and verifier.

Wire format::

    [4-byte length, uint32 big-endian] [canonical JSON envelope]

The envelope is ``{"kind", "session_id", "round", "body"}`` with a body
whose fields depend on the kind. Frames larger than the configured maximum
(1 MiB by default) are refused from the header alone, before any body byte
is read.
"""
import json
import socket
import socketserver
import struct
from dataclasses import dataclass, field
from typing import Callable

import structlog

from evidence_app.api.utils import canonical_bytes
from evidence_app.exceptions import DecodeError, FrameError, TransportError
from proof_app.api.serializers import BODY_SERIALIZERS, WireEnvelopeSerializer


logger = structlog.get_logger(__name__)

HEADER = struct.Struct("!I")
MAX_FRAME = 1 << 20

KINDS = tuple(BODY_SERIALIZERS)


@dataclass(frozen=True)
class WireMessage:
    """
    One protocol message.

    Attributes:
        kind: hello, commit, challenge, response, round-result, final-result or abort
        session_id: 16-byte session token
        round: 0 for hello, 1..k for round messages and the final result
        body: Kind-specific fields; big integers as Python ints
    """
    kind: str
    session_id: bytes
    round: int
    body: dict = field(default_factory=dict)


def encode_message(msg: WireMessage, max_frame: int = MAX_FRAME) -> bytes:
    """
    Length-prefix the canonical JSON of a message.

    Raises:
        DecodeError: If the body does not fit the schema of its kind
        FrameError: If the encoded message exceeds max_frame
    """
    body_serializer = BODY_SERIALIZERS.get(msg.kind)
    if body_serializer is None:
        raise DecodeError(f"Unknown message kind: {msg.kind!r}")
    expected = set(body_serializer().fields)
    if set(msg.body) != expected:
        raise DecodeError(f"A {msg.kind} message carries exactly: {', '.join(sorted(expected))}.")
    if len(msg.session_id) != 16:
        raise DecodeError("Session id must be 16 bytes.")

    payload = canonical_bytes({
        'kind': msg.kind,
        'session_id': msg.session_id.hex(),
        'round': msg.round,
        'body': body_serializer(msg.body).data,
    })
    if len(payload) > max_frame:
        raise FrameError(f"Frame of {len(payload)} bytes exceeds the {max_frame}-byte limit.")
    return HEADER.pack(len(payload)) + payload


def frame_length(header: bytes, max_frame: int = MAX_FRAME) -> int:
    """
    Raises:
        FrameError: If the declared length is zero or above max_frame
    """
    (length,) = HEADER.unpack(header)
    if length == 0 or length > max_frame:
        raise FrameError(f"Declared frame length {length} is outside 1..{max_frame}.")
    return length


def decode_payload(payload: bytes) -> WireMessage:
    """
    Parse and validate a frame body.

    Raises:
        DecodeError: If the body is not JSON or does not fit the envelope or its kind's schema
    """
    try:
        data = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"Frame is not valid JSON: {exc}") from exc

    envelope = WireEnvelopeSerializer(data=data)
    if not envelope.is_valid():
        raise DecodeError(f"Invalid envelope: {envelope.errors}")
    kind = envelope.validated_data['kind']

    body = BODY_SERIALIZERS[kind](data=envelope.validated_data['body'])
    if not body.is_valid():
        raise DecodeError(f"Invalid {kind} body: {body.errors}")

    return WireMessage(
        kind=kind,
        session_id=bytes.fromhex(envelope.validated_data['session_id']),
        round=envelope.validated_data['round'],
        body=dict(body.validated_data),
    )


def decode_message(data: bytes, max_frame: int = MAX_FRAME) -> WireMessage:
    """
    Decode one complete frame, length prefix included.

    Raises:
        FrameError: If the declared length is out of bounds or disagrees with the data
        DecodeError: If the body is malformed
    """
    if len(data) < HEADER.size:
        raise FrameError("Frame is shorter than its length prefix.")
    length = frame_length(data[:HEADER.size], max_frame)
    if len(data) != HEADER.size + length:
        raise FrameError(f"Frame declares {length} bytes but carries {len(data) - HEADER.size}.")
    return decode_payload(data[HEADER.size:])


class WireChannel:
    """
    Blocking message channel over a connected socket.

    Every receive is bounded by ``timeout`` seconds; timeouts and resets
    surface as TransportError.
    """

    def __init__(self, sock: socket.socket, timeout: float, max_frame: int = MAX_FRAME,
                 on_frame: Callable[[str, bytes], None] | None = None):
        self.sock = sock
        self.max_frame = max_frame
        self.on_frame = on_frame
        sock.settimeout(timeout)

    def send(self, msg: WireMessage) -> None:
        data = encode_message(msg, self.max_frame)
        if self.on_frame:
            self.on_frame("out", data)
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"Send failed: {exc}") from exc

    def receive(self) -> WireMessage:
        header = self._recv_exact(HEADER.size)
        length = frame_length(header, self.max_frame)
        payload = self._recv_exact(length)
        if self.on_frame:
            self.on_frame("in", header + payload)
        return decode_payload(payload)

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout as exc:
                raise TransportError("Timed out waiting for the peer.") from exc
            except OSError as exc:
                raise TransportError(f"Receive failed: {exc}") from exc
            if not chunk:
                raise TransportError("Peer closed the connection.")
            buf.extend(chunk)
        return bytes(buf)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class VerifierServer(socketserver.ThreadingTCPServer):
    """
    TCP listener running one independent session per connection.

    ``handle_connection`` receives a WireChannel and returns the finished
    transcript or None; transcripts are pushed to ``on_transcript``.
    """
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, handle_connection, timeout: float, max_frame: int = MAX_FRAME,
                 on_transcript: Callable | None = None):
        self.handle_connection = handle_connection
        self.message_timeout = timeout
        self.max_frame = max_frame
        self.on_transcript = on_transcript
        super().__init__(address, _VerifierRequestHandler)


class _VerifierRequestHandler(socketserver.BaseRequestHandler):

    def handle(self):
        server: VerifierServer = self.server
        channel = WireChannel(self.request, server.message_timeout, server.max_frame)
        try:
            transcript = server.handle_connection(channel)
        except Exception:
            logger.exception("verifier_session_crashed", peer=str(self.client_address))
            return
        if transcript is not None and server.on_transcript:
            server.on_transcript(transcript)
