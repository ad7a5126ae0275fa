"""CoAP message codec (RFC 7252 subset) and the transports that carry it.

The pipeline talks to the device executor over this wire. Supported
subset: CON/NON/ACK/RST, piggybacked responses, tokens up to 8 bytes,
options with delta/length up to the 1-byte extended form (values 13-268,
option values capped at 255 bytes). No blockwise transfer, no observe.

Wire layout (RFC 7252 section 3):

     0                   1                   2                   3
    |Ver| T |  TKL  |      Code     |          Message ID           |
    |  Token (TKL bytes) ...
    |  Options (delta-encoded) ...
    |  0xFF  |  Payload (iff non-empty) ...

Each option byte packs (delta << 4) | length; a nibble of 13 means one
extension byte follows holding value-13. Nibble 14 (2-byte extension)
and nibble 15 (outside the payload marker) are rejected.

URI convention toward the executor:
    GET   Uri-Path ["device", <device_id>]             read a value
    PUT   Uri-Path ["device", <device_id>, "config"]   payload = canonical
                                                       str_map of params
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

OPTION_URI_PATH = 11
OPTION_CONTENT_FORMAT = 12
PAYLOAD_MARKER = 0xFF

# RFC defaults for confirmable retransmission.
ACK_TIMEOUT_S = 2.0
MAX_RETRANSMIT = 4


class CoapType(IntEnum):
    CON = 0
    NON = 1
    ACK = 2
    RST = 3


@dataclass(frozen=True)
class Code:
    """CoAP code as a (class, detail) pair, printed c.dd."""

    clazz: int
    detail: int

    def to_byte(self) -> int:
        return ((self.clazz & 0x07) << 5) | (self.detail & 0x1F)

    @staticmethod
    def from_byte(raw: int) -> "Code":
        return Code(raw >> 5, raw & 0x1F)

    def __str__(self) -> str:
        return f"{self.clazz}.{self.detail:02d}"


EMPTY = Code(0, 0)
GET = Code(0, 1)
POST = Code(0, 2)
PUT = Code(0, 3)
CHANGED = Code(2, 4)
CONTENT = Code(2, 5)
BAD_REQUEST = Code(4, 0)
FORBIDDEN = Code(4, 3)
NOT_FOUND = Code(4, 4)


class CoapError(Exception):
    pass


class CoapEncodeError(CoapError):
    pass


class TokenTooLong(CoapEncodeError):
    pass


class OptionTooLong(CoapEncodeError):
    pass


class CoapDecodeError(CoapError):
    pass


class Truncated(CoapDecodeError):
    pass


class BadVersion(CoapDecodeError):
    pass


class ReservedTKL(CoapDecodeError):
    pass


class PayloadMarkerWithoutPayload(CoapDecodeError):
    pass


class BadOption(CoapDecodeError):
    pass


class CoapTimeout(CoapError):
    pass


@dataclass
class CoapMessage:
    mtype: CoapType
    code: Code
    message_id: int
    token: bytes = b""
    options: list[tuple[int, bytes]] = field(default_factory=list)
    payload: bytes = b""
    version: int = 1

    def __post_init__(self):
        # Options are kept sorted by number (stable, so repeats keep order);
        # the wire format requires ascending numbers for delta encoding.
        self.options = sorted(self.options, key=lambda opt: opt[0])

    def uri_path(self) -> list[str]:
        return [value.decode("utf-8") for num, value in self.options if num == OPTION_URI_PATH]


def uri_path_options(segments: list[str]) -> list[tuple[int, bytes]]:
    return [(OPTION_URI_PATH, seg.encode("utf-8")) for seg in segments]


def _encode_nibble(value: int) -> tuple[int, bytes]:
    if value <= 12:
        return value, b""
    if value <= 268:
        return 13, bytes([value - 13])
    raise OptionTooLong(f"delta/length {value} exceeds the 1-byte extended form")


def encode(msg: CoapMessage) -> bytes:
    if msg.version != 1:
        raise CoapEncodeError(f"version must be 1, got {msg.version}")
    if len(msg.token) > 8:
        raise TokenTooLong(f"token is {len(msg.token)} bytes, max 8")
    out = bytearray()
    out.append((msg.version << 6) | ((msg.mtype & 0x03) << 4) | len(msg.token))
    out.append(msg.code.to_byte())
    out += msg.message_id.to_bytes(2, "big")
    out += msg.token

    prev_number = 0
    for number, value in msg.options:
        if len(value) > 255:
            raise OptionTooLong(f"option {number} value is {len(value)} bytes, max 255")
        delta = number - prev_number
        if delta < 0:
            raise CoapEncodeError("option numbers must be non-decreasing")
        delta_nibble, delta_ext = _encode_nibble(delta)
        length_nibble, length_ext = _encode_nibble(len(value))
        out.append((delta_nibble << 4) | length_nibble)
        out += delta_ext
        out += length_ext
        out += value
        prev_number = number

    if msg.payload:
        out.append(PAYLOAD_MARKER)
        out += msg.payload
    return bytes(out)


def decode(data: bytes) -> CoapMessage:
    if len(data) < 4:
        raise Truncated(f"message is {len(data)} bytes, header needs 4")
    first = data[0]
    version = first >> 6
    if version != 1:
        raise BadVersion(f"version {version}")
    mtype = CoapType((first >> 4) & 0x03)
    tkl = first & 0x0F
    if tkl > 8:
        raise ReservedTKL(f"token length {tkl}")
    code = Code.from_byte(data[1])
    message_id = int.from_bytes(data[2:4], "big")

    pos = 4
    if len(data) < pos + tkl:
        raise Truncated("token runs past end of message")
    token = data[pos : pos + tkl]
    pos += tkl

    options: list[tuple[int, bytes]] = []
    payload = b""
    number = 0
    while pos < len(data):
        byte = data[pos]
        pos += 1
        if byte == PAYLOAD_MARKER:
            payload = data[pos:]
            if not payload:
                raise PayloadMarkerWithoutPayload("0xFF marker with nothing after it")
            pos = len(data)
            break
        delta_nibble = byte >> 4
        length_nibble = byte & 0x0F
        if delta_nibble >= 14 or length_nibble >= 14:
            raise BadOption(f"unsupported delta/length nibble in option byte 0x{byte:02x}")

        def extend(nibble: int) -> int:
            nonlocal pos
            if nibble != 13:
                return nibble
            if pos >= len(data):
                raise Truncated("option extension byte missing")
            ext = data[pos]
            pos += 1
            return 13 + ext

        delta = extend(delta_nibble)
        length = extend(length_nibble)
        if pos + length > len(data):
            raise Truncated("option value runs past end of message")
        value = data[pos : pos + length]
        pos += length
        number += delta
        options.append((number, value))

    return CoapMessage(
        mtype=mtype,
        code=code,
        message_id=message_id,
        token=token,
        options=options,
        payload=payload,
    )


# -- transports -----------------------------------------------------------

Handler = Callable[[bytes], Optional[bytes]]


class InProcessTransport:
    """Loopback transport carrying the same byte contract as UDP, without
    sockets. Deterministic: the server handler runs synchronously inside
    exchange(). drop_next simulates loss for retransmission tests."""

    def __init__(self):
        self._handler: Optional[Handler] = None
        self._lock = threading.Lock()
        self.drop_next = 0

    def bind(self, handler: Handler) -> None:
        self._handler = handler

    def exchange(self, data: bytes, timeout_s: float) -> Optional[bytes]:
        with self._lock:
            if self.drop_next > 0:
                self.drop_next -= 1
                return None
            if self._handler is None:
                return None
            return self._handler(data)


class UdpTransport:
    """Client-side UDP transport to a CoAP endpoint."""

    def __init__(self, host: str, port: int):
        self.addr = (host, port)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def exchange(self, data: bytes, timeout_s: float) -> Optional[bytes]:
        self._sock.settimeout(timeout_s)
        self._sock.sendto(data, self.addr)
        try:
            reply, _ = self._sock.recvfrom(65535)
            return reply
        except socket.timeout:
            return None

    def close(self) -> None:
        self._sock.close()


class CoapClient:
    """Request/response client. CON requests are retransmitted with
    exponential backoff (RFC defaults: 2 s base, 4 retransmits), then
    reported as CoapTimeout. Responses are matched on message_id and
    token of the piggybacked ACK."""

    def __init__(
        self,
        transport,
        ack_timeout_s: float = ACK_TIMEOUT_S,
        max_retransmit: int = MAX_RETRANSMIT,
    ):
        self._transport = transport
        self._ack_timeout_s = ack_timeout_s
        self._max_retransmit = max_retransmit
        self._next_mid = 1
        self._next_token = 1
        self._lock = threading.Lock()

    def _allocate(self) -> tuple[int, bytes]:
        with self._lock:
            mid = self._next_mid
            self._next_mid = (self._next_mid + 1) & 0xFFFF or 1
            token = self._next_token.to_bytes(4, "big")
            self._next_token += 1
            return mid, token

    def request(self, code: Code, uri: list[str], payload: bytes = b"") -> CoapMessage:
        mid, token = self._allocate()
        msg = CoapMessage(
            mtype=CoapType.CON,
            code=code,
            message_id=mid,
            token=token,
            options=uri_path_options(uri),
            payload=payload,
        )
        wire = encode(msg)
        timeout = self._ack_timeout_s
        for _attempt in range(self._max_retransmit + 1):
            reply = self._transport.exchange(wire, timeout)
            if reply is not None:
                response = decode(reply)
                if response.mtype is CoapType.RST:
                    raise CoapError(f"peer reset message {mid}")
                if response.message_id == mid and response.token == token:
                    return response
            timeout *= 2
        raise CoapTimeout(f"no acknowledgement for message {mid} after retransmits")


class CoapServer:
    """Datagram handler: decodes a request, routes it, replies with a
    piggybacked ACK. Malformed datagrams get an RST when the header is
    readable, otherwise they are dropped."""

    def __init__(self, router: Callable[[CoapMessage], tuple[Code, bytes]]):
        self._router = router

    def handle_datagram(self, data: bytes) -> Optional[bytes]:
        try:
            request = decode(data)
        except CoapDecodeError:
            if len(data) >= 4:
                mid = int.from_bytes(data[2:4], "big")
                return encode(CoapMessage(CoapType.RST, EMPTY, mid))
            return None
        code, payload = self._router(request)
        reply = CoapMessage(
            mtype=CoapType.ACK,
            code=code,
            message_id=request.message_id,
            token=request.token,
            payload=payload,
        )
        return encode(reply)


class UdpCoapEndpoint:
    """Background UDP listener feeding a CoapServer."""

    def __init__(self, server: CoapServer, host: str = "127.0.0.1", port: int = 0):
        self._server = server
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self.host, self.port = self._sock.getsockname()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _loop(self) -> None:
        self._sock.settimeout(0.2)
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            reply = self._server.handle_datagram(data)
            if reply is not None:
                self._sock.sendto(reply, addr)

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self._sock.close()
