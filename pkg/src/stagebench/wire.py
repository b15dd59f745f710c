"""Binary framing for the staging server protocol.

All integers are big-endian. Request: opcode u8 | key_len u32 | key bytes,
and for PUT additionally value_len u64 | value bytes. Response: status u8 |
payload_len u64 | payload bytes. LIST carries its prefix in the key field.
"""

from __future__ import annotations

import socket
import struct

OP_PUT = 0x01
OP_GET = 0x02
OP_EXISTS = 0x03
OP_DEL = 0x04
OP_LIST = 0x05
OP_PING = 0x06
OP_SHUTDOWN = 0x7F  # administrative; not part of the client data API

ST_OK = 0x00
ST_NOT_FOUND = 0x01
ST_ERR = 0x02

MAX_KEY_LEN = 1024
MAX_VALUE_LEN = 2**31 - 1

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

REQUEST_OPS = frozenset(
    (OP_PUT, OP_GET, OP_EXISTS, OP_DEL, OP_LIST, OP_PING, OP_SHUTDOWN)
)


class WireEOF(Exception):
    """Peer closed the stream mid-frame."""


def recv_exact(sock: socket.socket, n: int) -> bytes:
    """Read exactly n bytes or raise WireEOF."""
    if n == 0:
        return b""
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise WireEOF(f"peer closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks) if len(chunks) > 1 else chunks[0]


def pack_request(opcode: int, key: bytes, value: bytes | None = None) -> bytes:
    head = bytes([opcode]) + _U32.pack(len(key)) + key
    if opcode == OP_PUT:
        if value is None:
            raise ValueError("PUT requires a value")
        return head + _U64.pack(len(value)) + value
    return head


def send_request(
    sock: socket.socket, opcode: int, key: bytes, value: bytes | None = None
) -> None:
    sock.sendall(pack_request(opcode, key, value))


def pack_response(status: int, payload: bytes = b"") -> bytes:
    return bytes([status]) + _U64.pack(len(payload)) + payload


def send_response(sock: socket.socket, status: int, payload: bytes = b"") -> None:
    sock.sendall(pack_response(status, payload))


def read_response(sock: socket.socket) -> tuple[int, bytes]:
    status = recv_exact(sock, 1)[0]
    (payload_len,) = _U64.unpack(recv_exact(sock, 8))
    if payload_len > MAX_VALUE_LEN:
        raise ValueError(f"response payload {payload_len} exceeds protocol limit")
    payload = recv_exact(sock, payload_len)
    return status, payload
