"""Encrypt-then-MAC record protection for established sessions.

Record wire layout::

    seq (8) || iv (16) || ct_len (4) || ciphertext || tag (32)

The tag is HMAC-SHA256 over ``seq || iv || ciphertext`` under the sending
direction's MAC key and is checked before anything is decrypted. Framing,
tag and padding failures all raise :class:`IntegrityFailure`.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass

from .crypto import CryptoProvider
from .errors import ChannelClosed, IntegrityFailure, ReplayDetected
from .handshake import Role, SessionSecrets

IV_LEN = 16
TAG_LEN = 32
_PREFIX = struct.Struct(">Q16sI")
RECORD_OVERHEAD = _PREFIX.size + TAG_LEN


@dataclass(frozen=True)
class Record:
    seq: int
    iv: bytes
    ciphertext: bytes
    tag: bytes

    def encode(self) -> bytes:
        return _PREFIX.pack(self.seq, self.iv, len(self.ciphertext)) + self.ciphertext + self.tag

    @classmethod
    def decode(cls, data: bytes) -> "Record":
        if len(data) < RECORD_OVERHEAD:
            raise IntegrityFailure("record too short")
        seq, iv, ct_len = _PREFIX.unpack_from(data)
        if len(data) != RECORD_OVERHEAD + ct_len:
            raise IntegrityFailure("record length mismatch")
        ct = bytes(data[_PREFIX.size:_PREFIX.size + ct_len])
        return cls(seq, iv, ct, bytes(data[-TAG_LEN:]))


def _mac_input(seq: int, iv: bytes, ciphertext: bytes) -> bytes:
    return struct.pack(">Q", seq) + iv + ciphertext


class ChannelState:
    def __init__(self, secrets: SessionSecrets, role: Role, provider: CryptoProvider, rng: random.Random):
        self.secrets = secrets
        self.role = role
        self.provider = provider
        self.rng = rng
        self.send_seq = 0
        self.recv_high_water = 0
        self.closed = False
        if role is Role.INITIATOR:
            self._send_keys = (secrets.enc_i, secrets.mac_i)
            self._recv_keys = (secrets.enc_r, secrets.mac_r)
        else:
            self._send_keys = (secrets.enc_r, secrets.mac_r)
            self._recv_keys = (secrets.enc_i, secrets.mac_i)

    def close(self):
        self.closed = True


def seal(channel: ChannelState, plaintext: bytes) -> Record:
    if channel.closed:
        raise ChannelClosed("channel closed")
    enc_key, mac_key = channel._send_keys
    p = channel.provider
    seq = channel.send_seq + 1
    iv = p.random_bytes(channel.rng, IV_LEN)
    ct = p.cipher_encrypt(enc_key, iv, plaintext)
    tag = p.hmac(mac_key, _mac_input(seq, iv, ct))
    channel.send_seq = seq
    return Record(seq, iv, ct, tag)


def open_record(channel: ChannelState, record: Record | bytes) -> bytes:
    """Verify, replay-check and decrypt one record."""
    if channel.closed:
        raise ChannelClosed("channel closed")
    if not isinstance(record, Record):
        record = Record.decode(record)
    enc_key, mac_key = channel._recv_keys
    p = channel.provider
    if len(record.tag) != TAG_LEN or len(record.iv) != IV_LEN:
        raise IntegrityFailure("bad record field sizes")
    if not p.mac_equal(record.tag, p.hmac(mac_key, _mac_input(record.seq, record.iv, record.ciphertext))):
        raise IntegrityFailure("tag mismatch")
    if record.seq <= channel.recv_high_water:
        raise ReplayDetected(f"seq {record.seq} <= high water {channel.recv_high_water}")
    plaintext = p.cipher_decrypt(enc_key, record.iv, record.ciphertext)
    channel.recv_high_water = record.seq
    return plaintext
