"""Reliable Ethernet: fragmentation, selective-repeat ARQ and reassembly.

The core is sans-IO. :class:`ReliableLink` never touches a socket or a
clock; every entry point takes ``now`` (virtual milliseconds) and returns
an :class:`Output` holding the frames to transmit and the upward events.
The host polls :meth:`ReliableLink.next_timer` to know when to call
:meth:`ReliableLink.on_timer` again.
"""

from __future__ import annotations

import logging
import math
import random
import struct
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Set, Tuple

from .errors import CrcMismatch, InconsistentFragCount, MalformedSegment, MessageTooLarge
from .transport import BROADCAST, MTU, Frame, NodeAddress

_logger = logging.getLogger(__name__)

VERSION = 1
FLAG_ACK = 0x01
FLAG_DATA = 0x02

_HEADER = struct.Struct(">BBHHHHI")
HEADER_LEN = _HEADER.size  # 14
SEGMENT_CAPACITY = MTU - HEADER_LEN
MAX_FRAGMENTS = 0xFFFF
DEDUP_HORIZON = 1024


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


@dataclass(frozen=True)
class SegmentHeader:
    flags: int
    msg_id: int
    frag_index: int
    frag_count: int
    payload_len: int
    crc32: int
    version: int = VERSION

    def encode(self) -> bytes:
        return _HEADER.pack(self.version, self.flags, self.msg_id, self.frag_index,
                            self.frag_count, self.payload_len, self.crc32)

    @classmethod
    def decode(cls, data: bytes) -> "SegmentHeader":
        if len(data) < HEADER_LEN:
            raise MalformedSegment("segment shorter than header")
        version, flags, msg_id, idx, count, plen, crc = _HEADER.unpack_from(data)
        return cls(flags, msg_id, idx, count, plen, crc, version)

    @property
    def is_ack(self) -> bool:
        return self.flags == FLAG_ACK

    @property
    def is_data(self) -> bool:
        return self.flags == FLAG_DATA


@dataclass(frozen=True)
class Segment:
    header: SegmentHeader
    payload: bytes

    @classmethod
    def data(cls, msg_id: int, index: int, count: int, payload: bytes) -> "Segment":
        return cls(SegmentHeader(FLAG_DATA, msg_id, index, count, len(payload), crc32(payload)), payload)

    @classmethod
    def ack(cls, bitmap: "AckBitmap") -> "Segment":
        body = bitmap.encode()
        return cls(SegmentHeader(FLAG_ACK, bitmap.msg_id, 0, bitmap.frag_count, len(body), crc32(body)), body)

    def encode(self) -> bytes:
        return self.header.encode() + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Segment":
        """Parse and validate a segment; raises :class:`MalformedSegment` or :class:`CrcMismatch`."""
        h = SegmentHeader.decode(data)
        if h.version != VERSION:
            raise MalformedSegment(f"unsupported version {h.version}")
        if h.flags not in (FLAG_ACK, FLAG_DATA):
            raise MalformedSegment(f"bad flags {h.flags:#04x}")
        if h.frag_count < 1 or h.frag_index >= h.frag_count:
            raise MalformedSegment(f"fragment {h.frag_index}/{h.frag_count}")
        payload = bytes(data[HEADER_LEN:])
        if len(payload) != h.payload_len:
            raise MalformedSegment(f"payload_len {h.payload_len} but {len(payload)} bytes present")
        if crc32(payload) != h.crc32:
            raise CrcMismatch(f"msg {h.msg_id} fragment {h.frag_index}")
        return cls(h, payload)


class AckBitmap:
    """Per-message acknowledgment bitmap; bit ``i`` lives in byte ``i // 8``, LSB first.

    Wire form: msg_id (2 bytes, big-endian) followed by ``ceil(frag_count / 8)`` bitmap bytes.
    """

    def __init__(self, msg_id: int, frag_count: int, bits: bytes | None = None):
        self.msg_id = msg_id
        self.frag_count = frag_count
        size = (frag_count + 7) // 8
        self.bits = bytearray(bits if bits is not None else size)
        if len(self.bits) != size:
            raise MalformedSegment("bitmap length does not match frag_count")

    def set(self, i: int) -> None:
        self.bits[i >> 3] |= 1 << (i & 7)

    def is_set(self, i: int) -> bool:
        return bool(self.bits[i >> 3] & (1 << (i & 7)))

    def indices(self) -> List[int]:
        return [i for i in range(self.frag_count) if self.is_set(i)]

    def complete(self) -> bool:
        return all(self.is_set(i) for i in range(self.frag_count))

    def encode(self) -> bytes:
        return struct.pack(">H", self.msg_id) + bytes(self.bits)

    @classmethod
    def decode(cls, payload: bytes, frag_count: int) -> "AckBitmap":
        if len(payload) < 2:
            raise MalformedSegment("ack payload too short")
        (msg_id,) = struct.unpack_from(">H", payload)
        return cls(msg_id, frag_count, payload[2:])

    def __eq__(self, other):
        return (isinstance(other, AckBitmap) and self.msg_id == other.msg_id
                and self.frag_count == other.frag_count and self.bits == other.bits)

    def __repr__(self):
        return f"AckBitmap(msg_id={self.msg_id}, set={self.indices()}/{self.frag_count})"


@dataclass(frozen=True)
class ArqPolicy:
    retransmit_timeout: int = 200
    max_retries: int = 8
    reassembly_timeout: int = 5000

    def __post_init__(self):
        if min(self.retransmit_timeout, self.max_retries, self.reassembly_timeout) <= 0:
            raise ValueError("ArqPolicy fields must be strictly positive")


def fragment(message: bytes, capacity: int = SEGMENT_CAPACITY, msg_id: int = 0) -> List[Segment]:
    if not 0 < capacity <= SEGMENT_CAPACITY:
        raise ValueError(f"capacity must be in 1..{SEGMENT_CAPACITY}")
    count = max(1, math.ceil(len(message) / capacity))
    if count > MAX_FRAGMENTS:
        raise MessageTooLarge(f"{len(message)} bytes needs {count} fragments")
    return [Segment.data(msg_id, i, count, bytes(message[i * capacity:(i + 1) * capacity]))
            for i in range(count)]


class _Partial:
    __slots__ = ("frag_count", "parts", "started")

    def __init__(self, frag_count: int, started: int):
        self.frag_count = frag_count
        self.parts: Dict[int, bytes] = {}
        self.started = started


class Reassembler:
    """Collects DATA fragments per (source, msg_id) and emits each message once.

    Completed ids are retired for the last :data:`DEDUP_HORIZON` messages of
    each source so late duplicates are re-acknowledged but never re-emitted.
    """

    def __init__(self, horizon: int = DEDUP_HORIZON):
        self.horizon = horizon
        self._partials: Dict[Tuple[NodeAddress, int], _Partial] = {}
        self._retired: Dict[NodeAddress, Tuple[Deque[int], Set[int]]] = {}

    def add(self, segment: Segment, src: NodeAddress | None = None, now: int = 0) -> Optional[bytes]:
        h = segment.header
        key = (src, h.msg_id)
        if self.is_retired(src, h.msg_id):
            return None
        part = self._partials.get(key)
        if part is None:
            part = self._partials[key] = _Partial(h.frag_count, now)
        elif part.frag_count != h.frag_count:
            raise InconsistentFragCount(f"msg {h.msg_id}: {part.frag_count} vs {h.frag_count}")
        part.parts.setdefault(h.frag_index, segment.payload)
        if len(part.parts) < part.frag_count:
            return None
        del self._partials[key]
        self._retire(src, h.msg_id)
        return b"".join(part.parts[i] for i in range(part.frag_count))

    def bitmap(self, src: NodeAddress | None, msg_id: int, frag_count: int) -> AckBitmap:
        bm = AckBitmap(msg_id, frag_count)
        if self.is_retired(src, msg_id):
            for i in range(frag_count):
                bm.set(i)
            return bm
        part = self._partials.get((src, msg_id))
        if part is not None:
            for i in part.parts:
                bm.set(i)
        return bm

    def is_retired(self, src, msg_id: int) -> bool:
        entry = self._retired.get(src)
        return entry is not None and msg_id in entry[1]

    def _retire(self, src, msg_id):
        order, members = self._retired.setdefault(src, (deque(), set()))
        item = msg_id
        order.append(item)
        members.add(item)
        while len(order) > self.horizon:
            members.discard(order.popleft())

    def evict(self, now: int, timeout: int) -> int:
        stale = [k for k, p in self._partials.items() if now - p.started >= timeout]
        for k in stale:
            del self._partials[k]
        return len(stale)

    def next_expiry(self, timeout: int) -> Optional[int]:
        if not self._partials:
            return None
        return min(p.started for p in self._partials.values()) + timeout

    def pending(self) -> int:
        return len(self._partials)


def reassemble(buffer: Reassembler, segment: Segment, src: NodeAddress | None = None,
               now: int = 0) -> Optional[bytes]:
    """Feed one fragment; returns the full message once, or ``None`` while pending."""
    return buffer.add(segment, src, now)


# upward events
@dataclass(frozen=True)
class Delivered:
    src: NodeAddress
    message: bytes
    broadcast: bool = False


@dataclass(frozen=True)
class SendComplete:
    dest: NodeAddress
    msg_id: int
    transmissions: int


@dataclass(frozen=True)
class DeliveryFailed:
    dest: NodeAddress
    msg_id: int
    transmissions: int


@dataclass
class Output:
    frames: List[Frame] = field(default_factory=list)
    events: list = field(default_factory=list)

    def extend(self, other: "Output") -> "Output":
        self.frames.extend(other.frames)
        self.events.extend(other.events)
        return self


@dataclass
class LinkStats:
    data_sent: int = 0
    retransmissions: int = 0
    acks_sent: int = 0
    malformed: int = 0
    crc_errors: int = 0
    stray_acks: int = 0
    inconsistent: int = 0
    evicted: int = 0


class _Outgoing:
    __slots__ = ("dest", "msg_id", "segments", "acked", "rounds", "deadline", "transmissions")

    def __init__(self, dest, msg_id, segments):
        self.dest = dest
        self.msg_id = msg_id
        self.segments = segments
        self.acked: Set[int] = set()
        self.rounds = 0
        self.deadline = 0
        self.transmissions = 0


class ReliableLink:
    def __init__(self, address: NodeAddress, policy: ArqPolicy | None = None,
                 rng: random.Random | None = None, capacity: int = SEGMENT_CAPACITY):
        self.address = address
        self.policy = policy or ArqPolicy()
        self.capacity = capacity
        self.rng = rng or random.Random(0)
        self.reassembler = Reassembler()
        self.stats = LinkStats()
        self._next_id: Dict[NodeAddress, int] = {}
        self._outgoing: Dict[Tuple[NodeAddress, int], _Outgoing] = {}

    def _alloc_id(self, dest: NodeAddress) -> int:
        if dest not in self._next_id:
            # random start so a restarted sender does not collide with the peer's dedup horizon
            self._next_id[dest] = self.rng.getrandbits(16)
        msg_id = self._next_id[dest]
        self._next_id[dest] = (msg_id + 1) & 0xFFFF
        return msg_id

    def _frame(self, dest: NodeAddress, seg: Segment) -> Frame:
        return Frame(dest, self.address, seg.encode())

    def send(self, dest: NodeAddress, message: bytes, now: int) -> Tuple[int, Output]:
        if dest.is_broadcast:
            raise ValueError("use broadcast() for unacknowledged broadcast messages")
        msg_id = self._alloc_id(dest)
        segments = fragment(message, self.capacity, msg_id)
        out = _Outgoing(dest, msg_id, segments)
        self._outgoing[(dest, msg_id)] = out
        return msg_id, self._transmit_round(out, now)

    def broadcast(self, message: bytes, now: int) -> Output:
        """Single-fragment unacknowledged broadcast (discovery beacons)."""
        if len(message) > self.capacity:
            raise MessageTooLarge("broadcast messages must fit one fragment")
        seg = Segment.data(self._alloc_id(BROADCAST), 0, 1, message)
        self.stats.data_sent += 1
        return Output(frames=[self._frame(BROADCAST, seg)])

    def _transmit_round(self, out: _Outgoing, now: int) -> Output:
        result = Output()
        for seg in out.segments:
            if seg.header.frag_index in out.acked:
                continue
            result.frames.append(self._frame(out.dest, seg))
            out.transmissions += 1
            self.stats.data_sent += 1
            if out.rounds:
                self.stats.retransmissions += 1
        out.rounds += 1
        out.deadline = now + self.policy.retransmit_timeout
        return result

    def on_frame(self, frame: Frame, now: int) -> Output:
        try:
            seg = Segment.decode(frame.payload)
        except CrcMismatch:
            self.stats.crc_errors += 1
            return Output()
        except MalformedSegment:
            self.stats.malformed += 1
            return Output()
        if seg.header.is_ack:
            return self._on_ack(frame.src, seg)
        return self._on_data(frame, seg, now)

    def on_segment(self, src: NodeAddress, segment: Segment, now: int, dest: NodeAddress | None = None) -> Output:
        return self.on_frame(Frame(dest or self.address, src, segment.encode()), now)

    def _on_data(self, frame: Frame, seg: Segment, now: int) -> Output:
        h = seg.header
        if frame.dest.is_broadcast:
            if h.frag_count != 1:
                self.stats.malformed += 1
                return Output()
            return Output(events=[Delivered(frame.src, seg.payload, broadcast=True)])
        try:
            message = self.reassembler.add(seg, frame.src, now)
        except InconsistentFragCount:
            self.stats.inconsistent += 1
            return Output()
        bm = self.reassembler.bitmap(frame.src, h.msg_id, h.frag_count)
        self.stats.acks_sent += 1
        result = Output(frames=[self._frame(frame.src, Segment.ack(bm))])
        if message is not None:
            result.events.append(Delivered(frame.src, message))
        return result

    def _on_ack(self, src: NodeAddress, seg: Segment) -> Output:
        h = seg.header
        out = self._outgoing.get((src, h.msg_id))
        if out is None or len(out.segments) != h.frag_count:
            self.stats.stray_acks += 1
            return Output()
        try:
            bm = AckBitmap.decode(seg.payload, h.frag_count)
        except MalformedSegment:
            self.stats.malformed += 1
            return Output()
        if bm.msg_id != h.msg_id:
            self.stats.malformed += 1
            return Output()
        out.acked.update(bm.indices())
        if len(out.acked) < len(out.segments):
            return Output()
        del self._outgoing[(src, h.msg_id)]
        return Output(events=[SendComplete(src, h.msg_id, out.transmissions)])

    def on_timer(self, now: int) -> Output:
        result = Output()
        for key, out in list(self._outgoing.items()):
            if out.deadline > now:
                continue
            if out.rounds >= self.policy.max_retries + 1:
                del self._outgoing[key]
                result.events.append(DeliveryFailed(out.dest, out.msg_id, out.transmissions))
            else:
                result.extend(self._transmit_round(out, now))
        self.stats.evicted += self.reassembler.evict(now, self.policy.reassembly_timeout)
        return result

    def next_timer(self) -> Optional[int]:
        times = [o.deadline for o in self._outgoing.values()]
        expiry = self.reassembler.next_expiry(self.policy.reassembly_timeout)
        if expiry is not None:
            times.append(expiry)
        return min(times) if times else None

    def in_flight(self) -> int:
        return len(self._outgoing)

    def cancel(self, dest: NodeAddress, msg_id: int) -> bool:
        return self._outgoing.pop((dest, msg_id), None) is not None
