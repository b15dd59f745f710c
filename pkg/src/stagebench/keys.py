"""Key validation, shard placement, and the filename-safe key codec.

Keys are unicode strings hashed and encoded via their UTF-8 bytes. Shard
placement uses CRC-32 (reflected 0xEDB88320, init and final xor 0xFFFFFFFF),
so crc32_hex("123456789") == "CBF43926".
"""

from __future__ import annotations

import zlib

MAX_KEY_BYTES = 1024

# Bytes that survive encoding unchanged; everything else becomes %XX.
_SAFE = frozenset(
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789._-"
)
_HEX_DIGITS = "0123456789ABCDEF"


def key_bytes(key: str) -> bytes:
    """Validate a key and return its UTF-8 bytes.

    Raises ValueError for non-strings, empty keys, keys containing NUL, and
    keys whose encoded form exceeds MAX_KEY_BYTES.
    """
    if not isinstance(key, str):
        raise ValueError(f"key must be str, got {type(key).__name__}")
    if not key:
        raise ValueError("key must be non-empty")
    if "\x00" in key:
        raise ValueError("key must not contain NUL")
    raw = key.encode("utf-8")
    if len(raw) > MAX_KEY_BYTES:
        raise ValueError(f"key exceeds {MAX_KEY_BYTES} bytes")
    return raw


def shard_of(key: str, shard_count: int) -> int:
    """Map a key to a shard index in [0, shard_count)."""
    if shard_count < 1:
        raise ValueError("shard_count must be >= 1")
    return zlib.crc32(key_bytes(key)) % shard_count


def crc32_hex(key: str) -> str:
    """Uppercase 8-digit hex CRC-32 of the key's UTF-8 bytes."""
    return f"{zlib.crc32(key.encode('utf-8')):08X}"


def encode_key(key: str) -> str:
    """Percent-encode a key into a filename-safe token.

    Injective: safe bytes pass through, all others become uppercase %XX, and
    '%' itself is never in the safe set.
    """
    out = []
    for b in key.encode("utf-8"):
        if b in _SAFE:
            out.append(chr(b))
        else:
            out.append("%" + _HEX_DIGITS[b >> 4] + _HEX_DIGITS[b & 0xF])
    return "".join(out)


def decode_key(token: str) -> str:
    """Invert encode_key. Raises ValueError on malformed tokens."""
    raw = bytearray()
    i = 0
    n = len(token)
    while i < n:
        ch = token[i]
        if ch == "%":
            if i + 3 > n:
                raise ValueError(f"truncated escape in {token!r}")
            hi, lo = token[i + 1], token[i + 2]
            if hi not in _HEX_DIGITS or lo not in _HEX_DIGITS:
                raise ValueError(f"bad escape %{hi}{lo} in {token!r}")
            raw.append(int(hi + lo, 16))
            i += 3
        else:
            b = ord(ch)
            if b not in _SAFE:
                raise ValueError(f"unescaped byte {ch!r} in {token!r}")
            raw.append(b)
            i += 1
    return raw.decode("utf-8")
