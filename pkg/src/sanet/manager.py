"""Connection management and the device container.

A :class:`Node` owns one :class:`~sanet.reliable.ReliableLink`, the table of
discovered devices and every :class:`Connection`. It is driven by a single
event loop (the simulator or :func:`run_udp_loop`) through three entry
points: :meth:`Node.handle_frame`, :meth:`Node.on_timer` and the
application commands :meth:`Node.connect`, :meth:`Node.send_secure` and
:meth:`Node.close`. Everything observable is reported to ``listener`` as
event objects.

Platform message: ``msg_type (1) || conn_id (4, big-endian) || body``.
"""

from __future__ import annotations

import enum
import logging
import random
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, FrozenSet, List, Optional, Tuple

from . import handshake as hs
from .channel import ChannelState, open_record, seal
from .encoding import decode_fields, encode_fields
from .errors import (
    CryptoError,
    EncodingError,
    HandshakeError,
    IntegrityFailure,
    NotEstablished,
    ReplayDetected,
    UnknownDevice,
)
from .handshake import AuthMode, Identity, Phase, Role
from .reliable import ArqPolicy, Delivered, DeliveryFailed, Output, ReliableLink, SendComplete
from .transport import Frame, NodeAddress

_logger = logging.getLogger(__name__)

MSG_HELLO = 0x01
MSG_HS_M1 = 0x02
MSG_HS_M2 = 0x03
MSG_HS_M3 = 0x04
MSG_DATA = 0x05
MSG_CLOSE = 0x06
MSG_NAMES = {MSG_HELLO: "HELLO", MSG_HS_M1: "HS_M1", MSG_HS_M2: "HS_M2", MSG_HS_M3: "HS_M3",
             MSG_DATA: "DATA", MSG_CLOSE: "CLOSE"}

PROTOCOL_VERSION = 1
_HEADER = struct.Struct(">BI")
PLATFORM_HEADER_LEN = _HEADER.size

CLOSE_MARKER = b"CLOSE"


@dataclass(frozen=True)
class PlatformHeader:
    msg_type: int
    conn_id: int

    def encode(self) -> bytes:
        return _HEADER.pack(self.msg_type, self.conn_id)

    @classmethod
    def decode(cls, data: bytes) -> Tuple["PlatformHeader", bytes]:
        if len(data) < PLATFORM_HEADER_LEN:
            raise EncodingError("platform message shorter than header")
        msg_type, conn_id = _HEADER.unpack_from(data)
        return cls(msg_type, conn_id), bytes(data[PLATFORM_HEADER_LEN:])


def encode_hello(name: str, modes, version: int = PROTOCOL_VERSION) -> bytes:
    return encode_fields([name.encode("utf-8"), bytes(sorted(int(m) for m in modes)), bytes([version])])


def decode_hello(body: bytes) -> Tuple[str, FrozenSet[AuthMode], int]:
    name, modes, version = decode_fields(body, 3)
    if len(version) != 1:
        raise EncodingError("bad HELLO version field")
    try:
        return name.decode("utf-8"), frozenset(AuthMode(m) for m in modes), version[0]
    except (UnicodeDecodeError, ValueError) as exc:
        raise EncodingError(f"bad HELLO body: {exc}") from exc


class DeviceState(enum.Enum):
    DISCOVERED = "Discovered"
    STALE = "Stale"


@dataclass
class DeviceRecord:
    addr: NodeAddress
    name: str
    advertised_modes: FrozenSet[AuthMode]
    last_seen: int
    state: DeviceState = DeviceState.DISCOVERED


class ConnState(enum.Enum):
    CONNECTING = "Connecting"
    ESTABLISHED = "Established"
    CLOSED = "Closed"
    FAILED = "Failed"


@dataclass
class Connection:
    conn_id: int
    peer: NodeAddress
    mode: AuthMode
    role: Role
    handshake: Optional[hs.HandshakeState]
    channel: Optional[ChannelState] = None
    state: ConnState = ConnState.CONNECTING
    failure: Optional[str] = None
    outbox: Deque[bytes] = field(default_factory=deque)
    inflight: Optional[Tuple[int, bytes, int]] = None  # (msg_id, body, attempts)
    history: List[ConnState] = field(default_factory=lambda: [ConnState.CONNECTING])

    @property
    def key(self) -> Tuple[NodeAddress, int]:
        return (self.peer, self.conn_id)


# -- events -------------------------------------------------------------------

@dataclass(frozen=True)
class StateChanged:
    conn_id: int
    peer: NodeAddress
    role: Role
    old: Optional[ConnState]
    new: ConnState
    detail: str = ""


@dataclass(frozen=True)
class SessionEstablished:
    conn_id: int
    peer: NodeAddress
    role: Role
    secrets: hs.SessionSecrets


@dataclass(frozen=True)
class AppDeliver:
    conn_id: int
    peer: NodeAddress
    data: bytes


@dataclass(frozen=True)
class SendDone:
    conn_id: int
    peer: NodeAddress
    size: int


@dataclass(frozen=True)
class DeviceEvent:
    addr: NodeAddress
    name: str
    kind: str  # "discovered", "stale", "purged"


@dataclass(frozen=True)
class ErrorEvent:
    kind: str
    detail: str
    conn_id: int = 0
    peer: Optional[NodeAddress] = None


@dataclass
class NodeSettings:
    beacon_interval: int = 1000
    expiry_interval: int = 5000
    purge_interval: int = 30000
    handshake_timeout: int = hs.HANDSHAKE_TIMEOUT
    data_retries: int = 3
    arq: ArqPolicy = field(default_factory=ArqPolicy)


@dataclass
class NodeStats:
    malformed: int = 0
    unknown_type: int = 0
    stray: int = 0
    duplicate_m1: int = 0
    replays: int = 0
    integrity_failures: int = 0
    handshake_rejects: int = 0


class Node:
    def __init__(self, identity: Identity, endpoint, rng: random.Random | None = None,
                 settings: NodeSettings | None = None,
                 listener: Callable[[object], None] | None = None):
        self.identity = identity
        self.address = identity.address
        self.endpoint = endpoint
        self.rng = rng or random.Random()
        self.settings = settings or NodeSettings()
        self.listener = listener or (lambda ev: None)
        self.link = ReliableLink(self.address, self.settings.arq, self.rng)
        self.devices: Dict[NodeAddress, DeviceRecord] = {}
        self.connections: Dict[Tuple[NodeAddress, int], Connection] = {}
        self.handshakes: List[hs.HandshakeState] = []
        self.stats = NodeStats()
        self.running = False
        self._next_beacon: Optional[int] = None
        self._used_ids: set = set()
        self._seen_m1: set = set()
        self._pending: Dict[Tuple[NodeAddress, int], Tuple[Tuple[NodeAddress, int], int]] = {}

    # -- plumbing --------------------------------------------------------------

    def _emit(self, out: Output, now: int) -> None:
        for frame in out.frames:
            self.endpoint.send_frame(frame)
        for ev in out.events:
            if isinstance(ev, Delivered):
                self._on_message(ev.src, ev.message, now)
            elif isinstance(ev, SendComplete):
                self._on_link_done(ev.dest, ev.msg_id, True, now)
            elif isinstance(ev, DeliveryFailed):
                self._on_link_done(ev.dest, ev.msg_id, False, now)

    def _rel_send(self, conn: Connection, msg_type: int, body: bytes, now: int) -> int:
        msg_id, out = self.link.send(conn.peer, PlatformHeader(msg_type, conn.conn_id).encode() + body, now)
        self._pending[(conn.peer, msg_id)] = (conn.key, msg_type)
        self._emit(out, now)
        return msg_id

    def _set_state(self, conn: Connection, new: ConnState, detail: str = "") -> None:
        if conn.state is new:
            return
        old = conn.state
        conn.state = new
        conn.history.append(new)
        if new is ConnState.FAILED:
            conn.failure = detail
        if new in (ConnState.FAILED, ConnState.CLOSED):
            conn.outbox.clear()
            if conn.channel is not None:
                conn.channel.close()
        self.listener(StateChanged(conn.conn_id, conn.peer, conn.role, old, new, detail))

    def _handshake_done(self, conn: Connection) -> None:
        secrets = conn.handshake.secrets if conn.handshake else None
        if secrets is not None and conn.channel is None:
            conn.channel = ChannelState(secrets, conn.role, self.identity.provider, self.rng)

    # -- lifecycle ---------------------------------------------------------------

    def start(self, now: int) -> None:
        self.running = True
        self._next_beacon = now

    def stop(self) -> None:
        self.running = False
        self._next_beacon = None

    def next_timer(self) -> Optional[int]:
        times = []
        if self._next_beacon is not None:
            times.append(self._next_beacon)
        t = self.link.next_timer()
        if t is not None:
            times.append(t)
        for conn in self.connections.values():
            h = conn.handshake
            if conn.state is ConnState.CONNECTING and h is not None and h.deadline is not None \
                    and h.phase in (Phase.AWAIT_M2, Phase.AWAIT_M3):
                times.append(h.deadline)
        s = self.settings
        for dev in self.devices.values():
            times.append(dev.last_seen + (s.expiry_interval if dev.state is DeviceState.DISCOVERED
                                          else s.purge_interval))
        return min(times) if times else None

    def on_timer(self, now: int) -> None:
        self._emit(self.link.on_timer(now), now)
        if self._next_beacon is not None and now >= self._next_beacon:
            self.beacon_tick(now)
            self._next_beacon = now + self.settings.beacon_interval
        for conn in list(self.connections.values()):
            if conn.state is ConnState.CONNECTING and conn.handshake is not None \
                    and hs.check_timeout(conn.handshake, now):
                self._set_state(conn, ConnState.FAILED, "Timeout")
        self._expire_devices(now)

    def handle_frame(self, frame: Frame, now: int) -> None:
        self._emit(self.link.on_frame(frame, now), now)

    # -- discovery -----------------------------------------------------------------

    def beacon_tick(self, now: int) -> None:
        body = encode_hello(self.identity.name, self.identity.credentials.advertised_modes())
        self._emit(self.link.broadcast(PlatformHeader(MSG_HELLO, 0).encode() + body, now), now)

    def _on_hello(self, src: NodeAddress, header: PlatformHeader, body: bytes, now: int) -> None:
        if src == self.address or header.conn_id != 0:
            self.stats.malformed += header.conn_id != 0
            return
        try:
            name, modes, _version = decode_hello(body)
        except EncodingError:
            self.stats.malformed += 1
            return
        dev = self.devices.get(src)
        fresh = dev is None or dev.state is DeviceState.STALE
        self.devices[src] = DeviceRecord(src, name, modes, now)
        if fresh:
            self.listener(DeviceEvent(src, name, "discovered"))

    def _expire_devices(self, now: int) -> None:
        s = self.settings
        for addr, dev in list(self.devices.items()):
            if dev.state is DeviceState.DISCOVERED and now - dev.last_seen >= s.expiry_interval:
                dev.state = DeviceState.STALE
                self.listener(DeviceEvent(addr, dev.name, "stale"))
            if dev.state is DeviceState.STALE and now - dev.last_seen >= s.purge_interval:
                del self.devices[addr]
                self.listener(DeviceEvent(addr, dev.name, "purged"))

    # -- application commands --------------------------------------------------------

    def _new_conn_id(self) -> int:
        while True:
            cid = self.rng.getrandbits(32)
            if cid and cid not in self._used_ids:
                self._used_ids.add(cid)
                return cid

    def connect(self, peer: NodeAddress, now: int, mode: AuthMode | None = None) -> int:
        dev = self.devices.get(peer)
        if dev is None or dev.state is not DeviceState.DISCOVERED:
            raise UnknownDevice(str(peer))
        if mode is None:
            mode = hs.select_mode(self.identity.credentials, dev.advertised_modes)
        m1, state = hs.initiator_start(self.identity, peer, mode, self.rng, now,
                                       self.settings.handshake_timeout)
        self.handshakes.append(state)
        conn = Connection(self._new_conn_id(), peer, mode, Role.INITIATOR, state)
        self.connections[conn.key] = conn
        self.listener(StateChanged(conn.conn_id, peer, Role.INITIATOR, None, ConnState.CONNECTING, f"mode={mode.name}"))
        self._rel_send(conn, MSG_HS_M1, m1.encode(), now)
        return conn.conn_id

    def find(self, conn_id: int, peer: NodeAddress | None = None) -> Connection:
        if peer is not None:
            conn = self.connections.get((peer, conn_id))
            if conn is None:
                raise NotEstablished(f"no connection {conn_id:#010x} with {peer}")
            return conn
        matches = [c for c in self.connections.values() if c.conn_id == conn_id]
        if len(matches) != 1:
            raise NotEstablished(f"no connection {conn_id:#010x}")
        return matches[0]

    def send_secure(self, conn_id: int, data: bytes, now: int, peer: NodeAddress | None = None) -> None:
        conn = self.find(conn_id, peer)
        if conn.state is not ConnState.ESTABLISHED:
            raise NotEstablished(f"connection {conn_id:#010x} is {conn.state.value}")
        conn.outbox.append(bytes(data))
        self._pump(conn, now)

    def _pump(self, conn: Connection, now: int) -> None:
        # one DATA message in flight per connection keeps records in seq order
        if conn.inflight is not None or not conn.outbox or conn.state is not ConnState.ESTABLISHED:
            return
        data = conn.outbox.popleft()
        body = seal(conn.channel, data).encode() if conn.channel is not None else data
        msg_id = self._rel_send(conn, MSG_DATA, body, now)
        conn.inflight = (msg_id, body, 1)

    def close(self, conn_id: int, now: int, peer: NodeAddress | None = None) -> None:
        conn = self.find(conn_id, peer)
        if conn.state is ConnState.CLOSED:
            return
        if conn.state is ConnState.ESTABLISHED:
            body = seal(conn.channel, CLOSE_MARKER).encode() if conn.channel is not None else CLOSE_MARKER
            self._rel_send(conn, MSG_CLOSE, body, now)
        conn.inflight = None
        self._set_state(conn, ConnState.CLOSED, "local close")

    # -- message handling --------------------------------------------------------------

    def _on_message(self, src: NodeAddress, message: bytes, now: int) -> None:
        try:
            header, body = PlatformHeader.decode(message)
        except EncodingError:
            self.stats.malformed += 1
            return
        t = header.msg_type
        if t == MSG_HELLO:
            self._on_hello(src, header, body, now)
        elif t == MSG_HS_M1:
            self._on_m1(src, header.conn_id, body, now)
        elif t in (MSG_HS_M2, MSG_HS_M3):
            self._on_m2_m3(src, t, header.conn_id, body, now)
        elif t == MSG_DATA:
            self._on_data(src, header.conn_id, body, now)
        elif t == MSG_CLOSE:
            self._on_close(src, header.conn_id, body)
        else:
            self.stats.unknown_type += 1

    def _decode_hs(self, msg_type: int, body: bytes):
        msg = hs.decode_message(body)
        if not body or body[0] != msg_type:
            raise hs.Malformed("header type and handshake tag disagree")
        return msg

    def _on_m1(self, src: NodeAddress, conn_id: int, body: bytes, now: int) -> None:
        try:
            m1 = self._decode_hs(MSG_HS_M1, body)
        except HandshakeError:
            self.stats.malformed += 1
            return
        if conn_id == 0 or conn_id in self._used_ids or (src, conn_id) in self.connections:
            self.stats.stray += 1
            return
        if (src, m1.n1) in self._seen_m1:
            self.stats.duplicate_m1 += 1
            return
        self._seen_m1.add((src, m1.n1))
        self._used_ids.add(conn_id)
        try:
            m2, state = hs.responder_on_m1(self.identity, src, m1, self.rng, now, self.settings.handshake_timeout)
        except (HandshakeError, CryptoError) as exc:
            self.stats.handshake_rejects += 1
            conn = Connection(conn_id, src, m1.mode, Role.RESPONDER, None)
            self.connections[conn.key] = conn
            self.listener(ErrorEvent("handshake", f"{type(exc).__name__}: {exc}", conn_id, src))
            self._set_state(conn, ConnState.FAILED, type(exc).__name__)
            return
        self.handshakes.append(state)
        conn = Connection(conn_id, src, m1.mode, Role.RESPONDER, state)
        self.connections[conn.key] = conn
        self.listener(StateChanged(conn_id, src, Role.RESPONDER, None, ConnState.CONNECTING, f"mode={m1.mode.name}"))
        if m2 is None:
            self._set_state(conn, ConnState.ESTABLISHED, "NoAuth")
            return
        self._rel_send(conn, MSG_HS_M2, m2.encode(), now)

    def _on_m2_m3(self, src: NodeAddress, msg_type: int, conn_id: int, body: bytes, now: int) -> None:
        conn = self.connections.get((src, conn_id))
        want_role = Role.INITIATOR if msg_type == MSG_HS_M2 else Role.RESPONDER
        if conn is None or conn.role is not want_role or conn.handshake is None \
                or conn.state is not ConnState.CONNECTING:
            self.stats.stray += 1
            return
        state = conn.handshake
        expected = Phase.AWAIT_M2 if msg_type == MSG_HS_M2 else Phase.AWAIT_M3
        if state.phase is not expected:
            self.stats.stray += 1
            return
        try:
            msg = self._decode_hs(msg_type, body)
            if msg_type == MSG_HS_M2:
                m3, _ = hs.initiator_on_m2(state, msg)
            else:
                hs.responder_on_m3(state, msg, now)
        except (HandshakeError, CryptoError) as exc:
            self.stats.handshake_rejects += 1
            state.fail(f"{type(exc).__name__}: {exc}")
            self.listener(ErrorEvent("handshake", f"{type(exc).__name__}: {exc}", conn_id, src))
            self._set_state(conn, ConnState.FAILED, type(exc).__name__)
            return
        self._handshake_done(conn)
        if msg_type == MSG_HS_M2:
            # Established once M3 is acknowledged, so our first DATA cannot overtake it
            self._rel_send(conn, MSG_HS_M3, m3.encode(), now)
        else:
            self.listener(SessionEstablished(conn_id, src, conn.role, state.secrets))
            self._set_state(conn, ConnState.ESTABLISHED, state.secrets.peer_identity)

    def _on_link_done(self, dest: NodeAddress, msg_id: int, ok: bool, now: int) -> None:
        entry = self._pending.pop((dest, msg_id), None)
        if entry is None:
            return
        key, msg_type = entry
        conn = self.connections.get(key)
        if conn is None:
            return
        if msg_type == MSG_DATA:
            if conn.inflight is None or conn.inflight[0] != msg_id:
                return
            _, body, attempts = conn.inflight
            conn.inflight = None
            if ok:
                self.listener(SendDone(conn.conn_id, conn.peer, len(body)))
            elif conn.channel is not None and attempts <= self.settings.data_retries \
                    and conn.state is ConnState.ESTABLISHED:
                # resending the same record is safe: the peer's high-water mark rejects a copy it already has
                new_id = self._rel_send(conn, MSG_DATA, body, now)
                conn.inflight = (new_id, body, attempts + 1)
                return
            else:
                self._set_state(conn, ConnState.FAILED, "DeliveryFailed")
                return
            self._pump(conn, now)
            return
        if conn.state is not ConnState.CONNECTING:
            return
        if not ok and msg_type in (MSG_HS_M1, MSG_HS_M2, MSG_HS_M3):
            if conn.handshake is not None:
                conn.handshake.fail("HandshakeTimeout: link delivery failed")
            self._set_state(conn, ConnState.FAILED, "Timeout")
            return
        if ok and conn.role is Role.INITIATOR and conn.handshake is not None \
                and conn.handshake.phase is Phase.ESTABLISHED:
            if (msg_type == MSG_HS_M3) or (msg_type == MSG_HS_M1 and conn.mode is AuthMode.NO_AUTH):
                secrets = conn.handshake.secrets
                if secrets is not None:
                    self.listener(SessionEstablished(conn.conn_id, conn.peer, conn.role, secrets))
                self._set_state(conn, ConnState.ESTABLISHED,
                                secrets.peer_identity if secrets else "NoAuth")
                self._pump(conn, now)

    def _on_data(self, src: NodeAddress, conn_id: int, body: bytes, now: int) -> None:
        conn = self.connections.get((src, conn_id))
        if conn is None or conn.state in (ConnState.CLOSED, ConnState.FAILED):
            self.stats.stray += 1
            return
        if conn.mode is AuthMode.NO_AUTH:
            if conn.state is ConnState.ESTABLISHED:
                self.listener(AppDeliver(conn_id, src, body))
            else:
                self.stats.stray += 1
            return
        if conn.channel is None:
            self.stats.stray += 1
            return
        try:
            data = open_record(conn.channel, body)
        except ReplayDetected:
            self.stats.replays += 1
            return
        except IntegrityFailure as exc:
            self.stats.integrity_failures += 1
            self.listener(ErrorEvent("integrity", str(exc), conn_id, src))
            self._set_state(conn, ConnState.FAILED, "IntegrityFailure")
            return
        self.listener(AppDeliver(conn_id, src, data))

    def _on_close(self, src: NodeAddress, conn_id: int, body: bytes) -> None:
        conn = self.connections.get((src, conn_id))
        if conn is None or conn.state in (ConnState.CLOSED, ConnState.FAILED):
            self.stats.stray += 1
            return
        if conn.channel is not None:
            try:
                if open_record(conn.channel, body) != CLOSE_MARKER:
                    raise IntegrityFailure("not a close marker")
            except (IntegrityFailure, ReplayDetected):
                # unauthenticated CLOSE is ignored rather than treated as fatal
                self.stats.stray += 1
                return
        conn.inflight = None
        self._set_state(conn, ConnState.CLOSED, "peer close")

    # -- queries -------------------------------------------------------------------------

    def peers_table(self) -> List[DeviceRecord]:
        return sorted(self.devices.values(), key=lambda d: d.addr)

    def poll(self, now: int) -> int:
        """Drain due frames from the endpoint, then fire due timers; returns frames handled."""
        handled = 0
        while True:
            frame = self.endpoint.poll_frame(now)
            if frame is None:
                break
            self.handle_frame(frame, now)
            handled += 1
        t = self.next_timer()
        if t is not None and t <= now:
            self.on_timer(now)
        return handled
