"""Checksummed staging payloads.

A payload is (nbytes - 4) seeded random bytes followed by the big-endian
CRC-32 of those bytes, so a reader can detect torn or corrupted values
without knowing the seed. Payloads under 4 bytes carry no checksum.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_CRC = struct.Struct(">I")
MIN_CHECKSUMMED = 4


def make_payload(nbytes: int, seed: int) -> bytes:
    """Deterministic pseudo-random payload of exactly nbytes."""
    if nbytes < 0:
        raise ValueError("nbytes must be >= 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    if nbytes < MIN_CHECKSUMMED:
        return rng.bytes(nbytes)
    body = rng.bytes(nbytes - 4)
    return body + _CRC.pack(zlib.crc32(body))


def seal_payload(body: bytes) -> bytes:
    """Append the checksum trailer to an arbitrary body."""
    return body + _CRC.pack(zlib.crc32(body))


def verify_payload(buf: bytes) -> bool:
    """True when the checksum trailer matches (or the buf is too short
    to carry one)."""
    if len(buf) < MIN_CHECKSUMMED:
        return True
    body, trailer = buf[:-4], buf[-4:]
    return zlib.crc32(body) == _CRC.unpack(trailer)[0]
