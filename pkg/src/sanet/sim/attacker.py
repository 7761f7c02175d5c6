"""Medium-level attacker: sees every submitted frame and may drop, modify,
replay or inject.

A script is a small class with two hooks. ``on_frame`` is called for every
honest submission and returns the frames that actually go on the air;
``on_timer`` fires at times the script scheduled with :meth:`Attacker.at`.
Scripts register by name in :data:`SCRIPTS` so scenario files can refer to
them.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple, Type

from ..crypto import Certificate, CryptoProvider, KeyPair
from ..errors import SanetError
from ..handshake import HandshakeM1, HandshakeM2, _h, decode_message
from ..manager import MSG_DATA, MSG_HS_M1, MSG_HS_M2, MSG_HS_M3, PlatformHeader
from ..reliable import Segment
from ..transport import Frame, NodeAddress, SimMedium


@dataclass
class Parsed:
    frame: Frame
    segment: Segment
    header: PlatformHeader
    body: bytes
    handshake: object = None


@dataclass
class AttackerKit:
    """Credentials the attacker legitimately holds (never an honest private key)."""
    address: NodeAddress
    keypair: KeyPair
    rogue_ca: KeyPair
    rogue_certs: Dict[str, Certificate] = field(default_factory=dict)
    extra_private: List[bytes] = field(default_factory=list)


class Attacker:
    def __init__(self, medium: SimMedium, kit: AttackerKit, provider: CryptoProvider,
                 rng: random.Random, script: "Script"):
        self.medium = medium
        self.kit = kit
        self.provider = provider
        self.rng = rng
        self.script = script
        self.observed: List[Frame] = []
        self.injected: List[Frame] = []
        self.log: List[Tuple[int, str]] = []
        self._timers: List[Tuple[int, int, Callable[[int], None]]] = []
        self._tseq = 0
        self._last_msg_id: Dict[Tuple[NodeAddress, NodeAddress], int] = {}
        medium.interceptor = self.intercept
        script.setup(self)

    # -- hooks ---------------------------------------------------------------

    def intercept(self, frame: Frame) -> List[Frame]:
        self.observed.append(frame)
        try:
            seg = Segment.decode(frame.payload)
            if seg.header.is_data:
                self._last_msg_id[(frame.src, frame.dest)] = seg.header.msg_id
        except SanetError:
            pass
        return self.script.on_frame(self, frame, self.medium.now)

    def at(self, t: int, action: Callable[[int], None]) -> None:
        self._tseq += 1
        heapq.heappush(self._timers, (t, self._tseq, action))

    def next_timer(self) -> Optional[int]:
        return self._timers[0][0] if self._timers else None

    def on_timer(self, now: int) -> None:
        while self._timers and self._timers[0][0] <= now:
            _, _, action = heapq.heappop(self._timers)
            action(now)

    # -- toolkit -----------------------------------------------------------------

    def note(self, text: str) -> None:
        self.log.append((self.medium.now, text))

    @staticmethod
    def parse(frame: Frame) -> Optional[Parsed]:
        """Single-fragment DATA segments carrying a platform message, else None."""
        try:
            seg = Segment.decode(frame.payload)
            if not seg.header.is_data or seg.header.frag_count != 1:
                return None
            header, body = PlatformHeader.decode(seg.payload)
        except SanetError:
            return None
        parsed = Parsed(frame, seg, header, body)
        if MSG_HS_M1 <= header.msg_type <= MSG_HS_M3:
            try:
                parsed.handshake = decode_message(body)
            except SanetError:
                pass
        return parsed

    def craft(self, src: NodeAddress, dest: NodeAddress, msg_type: int, conn_id: int, body: bytes) -> Frame:
        """Wrap a platform message in a fresh segment whose msg_id avoids the honest stream."""
        last = self._last_msg_id.get((src, dest), self.rng.getrandbits(16))
        msg_id = (last + 3000 + self.rng.randrange(1000)) & 0xFFFF
        self._last_msg_id[(src, dest)] = msg_id
        payload = PlatformHeader(msg_type, conn_id).encode() + body
        return Frame(dest, src, Segment.data(msg_id, 0, 1, payload).encode())

    def inject(self, frame: Frame) -> None:
        self.injected.append(frame)
        self.medium.transmit(frame)

    def initial_knowledge(self) -> List[bytes]:
        return [self.kit.keypair.private, self.kit.rogue_ca.private] + list(self.kit.extra_private)


class Script:
    name = "noop"

    def setup(self, att: Attacker) -> None:
        pass

    def on_frame(self, att: Attacker, frame: Frame, now: int) -> List[Frame]:
        return [frame]


SCRIPTS: Dict[str, Type[Script]] = {}


def register(cls: Type[Script]) -> Type[Script]:
    SCRIPTS[cls.name] = cls
    return cls


register(Script)


@register
class ReplayM2(Script):
    """Answer a later session's M1 with the M2 recorded from an earlier one."""
    name = "replay"

    def __init__(self):
        self.recorded: Optional[Parsed] = None
        self.target_conn: Optional[int] = None
        self.sent = False

    def on_frame(self, att, frame, now):
        p = att.parse(frame)
        if p is None:
            return [frame]
        t = p.header.msg_type
        if t == MSG_HS_M1 and isinstance(p.handshake, HandshakeM1) and self.recorded is not None:
            if p.header.conn_id != self.recorded.header.conn_id and self.target_conn is None:
                self.target_conn = p.header.conn_id
                att.note(f"targeting conn {self.target_conn:08x}")
        if t == MSG_HS_M2:
            if self.recorded is None:
                self.recorded = p
                att.note("recorded M2")
            elif p.header.conn_id == self.target_conn:
                # swallow the honest answer (and its retransmissions); send the stale one instead
                if not self.sent:
                    self.sent = True
                    att.inject(att.craft(p.frame.src, p.frame.dest, MSG_HS_M2, self.target_conn,
                                         self.recorded.body))
                    att.note("replayed stale M2")
                return []
        return [frame]


@register
class Reflect(Script):
    """Bounce the initiator's own M1 back at it, spoofed from the responder."""
    name = "reflect"

    def __init__(self):
        self.done = False

    def on_frame(self, att, frame, now):
        p = att.parse(frame)
        if p is not None and p.header.msg_type == MSG_HS_M1 and not self.done:
            self.done = True
            att.inject(att.craft(frame.dest, frame.src, MSG_HS_M1, p.header.conn_id ^ 0x5A5A5A5A, p.body))
            att.note("reflected M1")
        return [frame]


@register
class SpliceNonce(Script):
    """Replace n2 in a later M2 with the n2 of an earlier session (n2 is not signed)."""
    name = "splice"

    def __init__(self):
        self.first: Optional[HandshakeM2] = None
        self.spliced: Dict[int, bytes] = {}

    def on_frame(self, att, frame, now):
        p = att.parse(frame)
        if p is None or p.header.msg_type != MSG_HS_M2 or not isinstance(p.handshake, HandshakeM2):
            return [frame]
        if self.first is None:
            self.first = p.handshake
            return [frame]
        cid = p.header.conn_id
        if cid not in self.spliced:
            self.spliced[cid] = replace(p.handshake, n2=self.first.n2).encode()
            att.note(f"spliced n2 into conn {cid:08x}")
        return [att.craft(frame.src, frame.dest, MSG_HS_M2, cid, self.spliced[cid])]


@register
class DropM3(Script):
    name = "drop-m3"

    def on_frame(self, att, frame, now):
        p = att.parse(frame)
        if p is not None and p.header.msg_type == MSG_HS_M3:
            att.note("dropped M3")
            return []
        return [frame]


@register
class ForgeCert(Script):
    """Impersonate the responder with a certificate from an untrusted CA, and
    separately open a session towards it claiming the initiator's address."""
    name = "forge-cert"

    def __init__(self):
        self.answered: set = set()
        self.opened = False

    def on_frame(self, att, frame, now):
        p = att.parse(frame)
        if p is None or p.header.msg_type != MSG_HS_M1 or not isinstance(p.handshake, HandshakeM1):
            return [frame]
        m1 = p.handshake
        prov, kit = att.provider, att.kit
        cid = p.header.conn_id
        if cid not in self.answered and m1.cert_a is not None:
            self.answered.add(cid)
            fake_b = prov.issue_certificate(kit.rogue_ca.private, frame.dest, "impostor",
                                            kit.keypair.public, 666)
            k = prov.session_key(att.rng)
            enc_k = prov.pk_encrypt(m1.cert_a.subject_public, k, att.rng)
            sig = prov.sign(kit.keypair.private, _h(prov, m1.n1, k, enc_k))
            m2 = HandshakeM2(m1.mode, prov.nonce(att.rng), enc_k, fake_b, sig)
            att.inject(att.craft(frame.dest, frame.src, MSG_HS_M2, cid, m2.encode()))
            att.note("forged M2 with rogue certificate")
        if not self.opened:
            self.opened = True
            fake_a = prov.issue_certificate(kit.rogue_ca.private, frame.src, "impostor-a",
                                            kit.keypair.public, 667)
            m1f = HandshakeM1(m1.mode, prov.nonce(att.rng), fake_a)
            att.inject(att.craft(frame.src, frame.dest, MSG_HS_M1, cid ^ 0x0F0F0F0F, m1f.encode()))
            att.note("opened session with rogue certificate")
        # the honest M1 never reaches the responder
        return []


@register
class InjectNoise(Script):
    """Periodic garbage: random payloads, valid segments with random bodies,
    random records on observed connections."""
    name = "inject-noise"

    interval = 97
    bursts = 60

    def __init__(self):
        self.conns: List[Tuple[NodeAddress, NodeAddress, int]] = []

    def setup(self, att):
        for i in range(self.bursts):
            att.at(50 + i * self.interval, lambda now, i=i: self.burst(att, i))

    def on_frame(self, att, frame, now):
        p = att.parse(frame)
        if p is not None and p.header.conn_id:
            key = (frame.src, frame.dest, p.header.conn_id)
            if key not in self.conns:
                self.conns.append(key)
        return [frame]

    def burst(self, att, i):
        rng = att.rng
        endpoints = [ep.address for ep in att.medium.endpoints()]
        if len(endpoints) < 2:
            return
        src, dest = rng.sample(endpoints, 2)
        att.inject(Frame(dest, src, rng.randbytes(rng.randrange(0, 200))))
        msg_type = rng.choice([MSG_HS_M1, MSG_HS_M2, MSG_HS_M3, MSG_DATA, 0x07, 0xEE])
        conn_id = rng.choice(self.conns)[2] if self.conns and rng.random() < 0.7 else rng.getrandbits(32)
        body = bytes([msg_type, rng.randrange(4)]) + rng.randbytes(rng.randrange(0, 300))
        att.inject(att.craft(src, dest, msg_type, conn_id, body))
        if self.conns:
            s, d, cid = rng.choice(self.conns)
            att.inject(att.craft(s, d, MSG_DATA, cid, rng.randbytes(8 + 16 + 4) + rng.randbytes(64)))


@register
class DuplicateM1(Script):
    """Re-send each M1 several times in fresh segments so only the handshake layer can dedup."""
    name = "duplicate-m1"
    copies = 3

    def on_frame(self, att, frame, now):
        p = att.parse(frame)
        out = [frame]
        if p is not None and p.header.msg_type == MSG_HS_M1 and p.segment.header.frag_index == 0:
            for k in range(self.copies):
                out.append(att.craft(frame.src, frame.dest, MSG_HS_M1, p.header.conn_id, p.body))
                out.append(att.craft(frame.src, frame.dest, MSG_HS_M1, p.header.conn_id + k + 1, p.body))
            att.note("duplicated M1")
        return out


@register
class TranscriptReplay(Script):
    """Record everything up to ``record_until`` and replay it at ``replay_at``,
    both verbatim and re-segmented."""
    name = "full-transcript-replay"
    record_until = 3500
    replay_at = 5000

    def __init__(self):
        self.recorded: List[Frame] = []

    def setup(self, att):
        att.at(self.replay_at, lambda now: self.replay(att))

    def on_frame(self, att, frame, now):
        if now <= self.record_until:
            self.recorded.append(frame)
        return [frame]

    def replay(self, att):
        for f in self.recorded:
            att.inject(f)
            p = att.parse(f)
            if p is not None and p.header.conn_id:
                att.inject(att.craft(f.src, f.dest, p.header.msg_type, p.header.conn_id, p.body))
                att.inject(att.craft(f.src, f.dest, p.header.msg_type, p.header.conn_id ^ 1, p.body))
        att.note(f"replayed {len(self.recorded)} frames")


@register
class KeySubstitution(Script):
    """Swap enc_k for an encryption of an attacker-chosen key under the initiator's public key."""
    name = "key-substitution"

    def __init__(self):
        self.m1s: Dict[int, HandshakeM1] = {}
        self.swapped: Dict[int, bytes] = {}

    def on_frame(self, att, frame, now):
        p = att.parse(frame)
        if p is None:
            return [frame]
        if p.header.msg_type == MSG_HS_M1 and isinstance(p.handshake, HandshakeM1):
            self.m1s[p.header.conn_id] = p.handshake
        if p.header.msg_type == MSG_HS_M2 and isinstance(p.handshake, HandshakeM2):
            cid = p.header.conn_id
            m1 = self.m1s.get(cid)
            if m1 is None or m1.cert_a is None:
                return [frame]
            if cid not in self.swapped:
                k = att.provider.session_key(att.rng)
                enc = att.provider.pk_encrypt(m1.cert_a.subject_public, k, att.rng)
                self.swapped[cid] = replace(p.handshake, enc_k=enc).encode()
                att.note(f"substituted key in conn {cid:08x}")
            return [att.craft(frame.src, frame.dest, MSG_HS_M2, cid, self.swapped[cid])]
        return [frame]


@register
class DataReplay(Script):
    """Replay every DATA message in a fresh segment after a delay."""
    name = "data-replay"
    delay = 400

    def on_frame(self, att, frame, now):
        p = att.parse(frame)
        if p is not None and p.header.msg_type == MSG_DATA and p.segment.header.frag_index == 0:
            f = att.craft(frame.src, frame.dest, MSG_DATA, p.header.conn_id, p.body)
            att.at(now + self.delay, lambda t, f=f: att.inject(f))
        return [frame]


def make_script(name: str) -> Script:
    try:
        return SCRIPTS[name]()
    except KeyError:
        raise KeyError(f"unknown attacker script {name!r}; known: {sorted(SCRIPTS)}") from None
