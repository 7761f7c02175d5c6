"""Base frame transfer layer.

Two interchangeable backends share the :class:`Frame` wire encoding:

* :class:`SimMedium` -- deterministic in-memory broadcast medium on a
  virtual clock, with a seeded loss/duplication/reordering model.
* :class:`UdpMedium` -- every node is an OS socket on a loopback multicast
  group; the encoded frame is the UDP payload and destination filtering is
  done in software.
"""

from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from .errors import (
    Detached,
    DuplicateAddress,
    InvalidAddress,
    MalformedFrame,
    OversizePayload,
    SourceMismatch,
)
from .prng import SplitMix64

_logger = logging.getLogger(__name__)

ETHERTYPE = 0x88B5
MTU = 1500
FRAME_HEADER_LEN = 14

DEFAULT_GROUP = "239.77.77.1"
DEFAULT_PORT = 47474


@dataclass(frozen=True, order=True)
class NodeAddress:
    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, (bytes, bytearray)) or len(self.raw) != 6:
            raise InvalidAddress(f"node address must be 6 bytes, got {self.raw!r}")
        object.__setattr__(self, "raw", bytes(self.raw))

    @classmethod
    def parse(cls, text: str) -> "NodeAddress":
        parts = text.replace("-", ":").split(":")
        try:
            raw = bytes(int(p, 16) for p in parts)
        except ValueError as exc:
            raise InvalidAddress(f"bad address {text!r}") from exc
        return cls(raw)

    @property
    def is_broadcast(self) -> bool:
        return self.raw == b"\xff" * 6

    def __str__(self):
        return ":".join(f"{b:02x}" for b in self.raw)

    def __repr__(self):
        return f"NodeAddress({self})"


BROADCAST = NodeAddress(b"\xff" * 6)


@dataclass(frozen=True)
class Frame:
    dest: NodeAddress
    src: NodeAddress
    payload: bytes
    ethertype: int = ETHERTYPE

    def __post_init__(self):
        if len(self.payload) > MTU:
            raise OversizePayload(f"payload of {len(self.payload)} bytes exceeds {MTU}")
        if self.ethertype != ETHERTYPE:
            raise MalformedFrame(f"unexpected ethertype {self.ethertype:#06x}")
        if self.src.is_broadcast:
            raise InvalidAddress("broadcast address cannot be a source")

    def encode(self) -> bytes:
        return self.dest.raw + self.src.raw + struct.pack(">H", self.ethertype) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Frame":
        if len(data) < FRAME_HEADER_LEN:
            raise MalformedFrame("frame shorter than header")
        (ethertype,) = struct.unpack_from(">H", data, 12)
        try:
            return cls(NodeAddress(data[0:6]), NodeAddress(data[6:12]), bytes(data[14:]), ethertype)
        except (OversizePayload, InvalidAddress) as exc:
            raise MalformedFrame(str(exc)) from exc


@dataclass
class LinkModel:
    """Link fault model for the simulated medium.

    Per recipient copy, in this order and only when the parameter is
    non-zero: one draw decides loss (``u < p_loss``), one draw decides
    duplication (``u < p_dup``), then for every surviving copy one draw
    ``k = next_u64() % (reorder_window + 1)`` moves the copy ``k`` places
    ahead of the frames already queued for that recipient.
    """

    p_loss: float = 0.0
    p_dup: float = 0.0
    reorder_window: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_loss", "p_dup"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.reorder_window < 0:
            raise ValueError("reorder_window must be non-negative")


@dataclass
class MediumStats:
    submitted: int = 0
    delivered: int = 0
    dropped: int = 0
    duplicated: int = 0


# (kind, frame, recipient) -- kind is "sent", "delivered", "dropped"
MediumObserver = Callable[[str, Frame, Optional[NodeAddress]], None]
# returns the frames that actually reach the air in place of the submitted one
Interceptor = Callable[[Frame], List[Frame]]


class SimEndpoint:
    def __init__(self, medium: "SimMedium", address: NodeAddress):
        self.medium = medium
        self.address = address
        self.attached = True
        self._queue: List[Tuple[int, Frame]] = []

    def send_frame(self, frame: Frame) -> None:
        self._check()
        if frame.src != self.address:
            raise SourceMismatch(f"frame src {frame.src} != endpoint {self.address}")
        self.medium.submit(frame)

    def poll_frame(self, deadline: Optional[int] = None) -> Optional[Frame]:
        """Next delivered frame due at or before ``deadline`` (default: now)."""
        self._check()
        if deadline is None:
            deadline = self.medium.now
        if self._queue and self._queue[0][0] <= deadline:
            return self._queue.pop(0)[1]
        return None

    def pending(self) -> int:
        return len(self._queue)

    def next_due(self) -> Optional[int]:
        return self._queue[0][0] if self._queue else None

    def now(self) -> int:
        return self.medium.now

    def detach(self) -> None:
        if self.attached:
            self.attached = False
            self.medium._detach(self)

    def _check(self):
        if not self.attached:
            raise Detached(str(self.address))


class SimMedium:
    """Single-threaded broadcast domain on a virtual millisecond clock."""

    def __init__(self, link: LinkModel | None = None, latency: int = 1):
        self.link = link or LinkModel()
        self.latency = latency
        self.now = 0
        self.rng = SplitMix64(self.link.seed)
        self.stats = MediumStats()
        self.observers: List[MediumObserver] = []
        self.interceptor: Optional[Interceptor] = None
        self._endpoints: Dict[NodeAddress, SimEndpoint] = {}

    def attach(self, addr: NodeAddress) -> SimEndpoint:
        if addr.is_broadcast:
            raise InvalidAddress("cannot attach the broadcast address")
        if addr in self._endpoints:
            raise DuplicateAddress(str(addr))
        ep = SimEndpoint(self, addr)
        self._endpoints[addr] = ep
        return ep

    def _detach(self, ep: SimEndpoint):
        self._endpoints.pop(ep.address, None)

    def endpoints(self) -> List[SimEndpoint]:
        return list(self._endpoints.values())

    def advance(self, t: int) -> None:
        if t < self.now:
            raise ValueError("virtual time cannot go backwards")
        self.now = t

    def next_due(self) -> Optional[int]:
        dues = [d for d in (ep.next_due() for ep in self._endpoints.values()) if d is not None]
        return min(dues) if dues else None

    def submit(self, frame: Frame) -> None:
        """Entry point for endpoint sends; passes through the interceptor if any."""
        self.stats.submitted += 1
        frames = self.interceptor(frame) if self.interceptor else [frame]
        for f in frames:
            self.transmit(f)

    def transmit(self, frame: Frame) -> None:
        """Put a frame on the air, bypassing the interceptor (used for injection)."""
        self._notify("sent", frame, None)
        for addr, ep in self._endpoints.items():
            if addr == frame.src:
                continue
            if not frame.dest.is_broadcast and frame.dest != addr:
                continue
            self._deliver(ep, frame)

    def _deliver(self, ep: SimEndpoint, frame: Frame):
        link = self.link
        if link.p_loss > 0.0 and self.rng.next_float() < link.p_loss:
            self.stats.dropped += 1
            self._notify("dropped", frame, ep.address)
            return
        copies = 1
        if link.p_dup > 0.0 and self.rng.next_float() < link.p_dup:
            copies = 2
            self.stats.duplicated += 1
        due = self.now + self.latency
        for _ in range(copies):
            pos = len(ep._queue)
            if link.reorder_window > 0:
                pos = max(0, pos - self.rng.below(link.reorder_window + 1))
            ep._queue.insert(pos, (due, frame))
            self.stats.delivered += 1
            self._notify("delivered", frame, ep.address)

    def _notify(self, kind, frame, to):
        for obs in self.observers:
            obs(kind, frame, to)


class UdpEndpoint:
    """A node bound to the loopback multicast group.

    A reader thread decodes datagrams, filters them by destination and
    queues them; consumers see a single-threaded stream via
    :meth:`poll_frame`. Time is wall-clock milliseconds.
    """

    def __init__(self, address: NodeAddress, group: str = DEFAULT_GROUP, port: int = DEFAULT_PORT,
                 interface: str = "127.0.0.1"):
        if address.is_broadcast:
            raise InvalidAddress("cannot attach the broadcast address")
        self.address = address
        self.group = group
        self.port = port
        self.attached = True
        self.malformed = 0
        self._inbox: "queue.Queue[Frame]" = queue.Queue()
        self._sock = self._open_socket(interface)
        self._reader = threading.Thread(target=self._read_loop, name=f"udp-{address}", daemon=True)
        self._reader.start()

    def _open_socket(self, interface):
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        if hasattr(socket, "SO_REUSEPORT"):
            s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4 << 20)
        s.bind(("", self.port))
        mreq = struct.pack("4s4s", socket.inet_aton(self.group), socket.inet_aton(interface))
        s.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        s.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_IF, socket.inet_aton(interface))
        s.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        s.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, 0)
        s.settimeout(0.2)
        return s

    def _read_loop(self):
        while self.attached:
            try:
                data, _ = self._sock.recvfrom(FRAME_HEADER_LEN + MTU + 64)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                frame = Frame.decode(data)
            except MalformedFrame:
                self.malformed += 1
                continue
            if frame.src == self.address:
                continue
            if frame.dest != self.address and not frame.dest.is_broadcast:
                continue
            self._inbox.put(frame)

    def now(self) -> int:
        return int(time.monotonic() * 1000)

    def send_frame(self, frame: Frame) -> None:
        if not self.attached:
            raise Detached(str(self.address))
        if frame.src != self.address:
            raise SourceMismatch(f"frame src {frame.src} != endpoint {self.address}")
        self._sock.sendto(frame.encode(), (self.group, self.port))

    def poll_frame(self, deadline: Optional[int] = None) -> Optional[Frame]:
        if not self.attached:
            raise Detached(str(self.address))
        timeout = 0.0 if deadline is None else max(0.0, (deadline - self.now()) / 1000.0)
        try:
            if timeout == 0.0:
                return self._inbox.get_nowait()
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            return None

    def detach(self) -> None:
        if self.attached:
            self.attached = False
            self._reader.join(timeout=1.0)
            self._sock.close()


class UdpMedium:
    """Factory mirroring :class:`SimMedium.attach` for the UDP backend."""

    def __init__(self, group: str = DEFAULT_GROUP, port: int = DEFAULT_PORT):
        self.group = group
        self.port = port
        self._local: Dict[NodeAddress, UdpEndpoint] = {}

    def attach(self, addr: NodeAddress) -> UdpEndpoint:
        if addr in self._local and self._local[addr].attached:
            raise DuplicateAddress(str(addr))
        ep = UdpEndpoint(addr, self.group, self.port)
        self._local[addr] = ep
        return ep
