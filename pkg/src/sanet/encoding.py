"""Canonical length-prefixed encoding.

Every field is written as a 2-byte big-endian length followed by the raw
bytes, in declared order. Used for certificates, hash inputs, handshake
bodies and HELLO payloads.
"""

from __future__ import annotations

import struct
from typing import Iterable, List, Sequence

from .errors import EncodingError

MAX_FIELD = 0xFFFF


def encode_fields(fields: Iterable[bytes]) -> bytes:
    out = bytearray()
    for f in fields:
        f = bytes(f)
        if len(f) > MAX_FIELD:
            raise EncodingError(f"field of {len(f)} bytes exceeds {MAX_FIELD}")
        out += struct.pack(">H", len(f))
        out += f
    return bytes(out)


def decode_fields(data: bytes, count: int | None = None) -> List[bytes]:
    """Inverse of :func:`encode_fields`.

    With ``count`` set, exactly that many fields must be present and the
    input must be consumed completely.
    """
    fields = []
    pos = 0
    n = len(data)
    while pos < n:
        if pos + 2 > n:
            raise EncodingError("truncated length prefix")
        (length,) = struct.unpack_from(">H", data, pos)
        pos += 2
        if pos + length > n:
            raise EncodingError("truncated field")
        fields.append(bytes(data[pos:pos + length]))
        pos += length
    if count is not None and len(fields) != count:
        raise EncodingError(f"expected {count} fields, got {len(fields)}")
    return fields


def encode_uint(value: int, size: int) -> bytes:
    return value.to_bytes(size, "big")


def decode_uint(data: bytes, size: int) -> int:
    if len(data) != size:
        raise EncodingError(f"expected {size}-byte integer, got {len(data)} bytes")
    return int.from_bytes(data, "big")


def encode_int(value: int) -> bytes:
    """Minimal big-endian encoding of a non-negative integer (at least one byte)."""
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def decode_int(data: Sequence[int]) -> int:
    return int.from_bytes(bytes(data), "big")
