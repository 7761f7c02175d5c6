"""Discrete-event driver for multi-node scenarios on the simulated medium."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..crypto import CryptoProvider, KeyPair, get_provider
from ..crypto import public_of
from ..errors import SanetError
from ..handshake import Credentials, HandshakeState, Identity
from ..manager import (
    AppDeliver,
    Connection,
    DeviceEvent,
    ErrorEvent,
    Node,
    NodeSettings,
    SendDone,
    SessionEstablished,
    StateChanged,
)
from ..transport import Frame, NodeAddress, SimMedium
from .attacker import Attacker, AttackerKit, make_script
from .knowledge import KnowledgeSet, Lifter, PrivKey, RecordingProvider, knowledge_closure
from .scenario import Scenario

PSK_ID = "group"
MAX_SPINS = 100_000


@dataclass(frozen=True)
class TraceEvent:
    t: int
    seq: int
    kind: str
    node: str
    detail: str

    def line(self) -> str:
        return f"{self.t:09d} {self.seq:07d} {self.kind} {self.node} {self.detail}"


@dataclass
class World:
    provider: RecordingProvider
    ca: KeyPair
    rogue_ca: KeyPair
    keypairs: Dict[str, KeyPair]
    identities: Dict[str, Identity]
    psk: bytes
    kit: Optional[AttackerKit]


def _key_rng(key_seed: int, label: str) -> random.Random:
    return random.Random(f"keys:{key_seed}:{label}")


def build_world(sc: Scenario, inner: CryptoProvider | None = None) -> World:
    provider = RecordingProvider(inner or get_provider(sc.provider))
    ca = provider.generate_keypair(_key_rng(sc.key_seed, "ca"))
    rogue = provider.generate_keypair(_key_rng(sc.key_seed, "rogue-ca"))
    psk = _key_rng(sc.key_seed, "psk").randbytes(32)
    keypairs, identities = {}, {}
    for serial, spec in enumerate(sc.nodes, start=1):
        kp = provider.generate_keypair(_key_rng(sc.key_seed, spec.name))
        keypairs[spec.name] = kp
        cert = None
        if spec.cert != "none":
            issuer = ca if spec.cert == "trusted" else rogue
            cert = provider.issue_certificate(issuer.private, spec.address, spec.name, kp.public, serial)
        creds = Credentials(kp if cert else None, cert, ca.public if spec.trust_ca else None,
                            psk if spec.psk else None, PSK_ID if spec.psk else "")
        identities[spec.name] = Identity(spec.address, spec.name, creds, provider, spec.require_auth)
    kit = None
    if sc.attacker is not None:
        akp = provider.generate_keypair(_key_rng(sc.key_seed, "attacker"))
        kit = AttackerKit(sc.attacker.address, akp, rogue,
                          extra_private=[keypairs[n].private for n in sc.attacker.holds_keys_of])
    return World(provider, ca, rogue, keypairs, identities, psk, kit)


@dataclass
class SentRecord:
    t: int
    node: str
    peer: str
    conn_id: int
    payload: bytes


@dataclass
class SimResult:
    scenario: Scenario
    world: World
    trace: List[TraceEvent]
    nodes: Dict[str, Node]
    frames: List[Frame]
    sent: List[SentRecord]
    delivered: List[Tuple[int, str, str, int, bytes]]  # (t, node, from, conn_id, data)
    sessions: List[Tuple[str, SessionEstablished]]
    command_errors: List[Tuple[int, str, str]]
    attacker: Optional[Attacker] = None
    _closure: Optional[KnowledgeSet] = field(default=None, repr=False)
    _lifter: Optional[Lifter] = field(default=None, repr=False)

    def trace_text(self) -> str:
        return "".join(ev.line() + "\n" for ev in self.trace)

    def trace_bytes(self) -> bytes:
        return self.trace_text().encode("utf-8")

    def name_of(self, addr: NodeAddress) -> str:
        for spec in self.scenario.nodes:
            if spec.address == addr:
                return spec.name
        if self.scenario.attacker is not None and addr == self.scenario.attacker.address:
            return "attacker"
        return str(addr)

    def address_of(self, name: str) -> NodeAddress:
        return self.nodes[name].address

    def connections(self, node: str, peer: str | None = None) -> List[Connection]:
        conns = list(self.nodes[node].connections.values())
        if peer is not None:
            conns = [c for c in conns if c.peer == self.address_of(peer)]
        return conns

    def handshakes(self, node: str) -> List[HandshakeState]:
        return list(self.nodes[node].handshakes)

    def session_keys(self) -> List[bytes]:
        """Every session master secret any honest node generated or accepted."""
        keys = []
        for node in self.nodes.values():
            for h in node.handshakes:
                if h.session_key and h.session_key not in keys:
                    keys.append(h.session_key)
        return keys

    def attacker_initial(self) -> list:
        if self.world.kit is None:
            return []
        kit = self.world.kit
        privs = [kit.keypair.private, kit.rogue_ca.private] + list(kit.extra_private)
        return [PrivKey(public_of(p)) for p in privs]

    def closure(self) -> KnowledgeSet:
        if self._closure is None:
            self._lifter = Lifter(self.world.provider)
            terms = self._lifter.frames(self.frames)
            self._closure = knowledge_closure(terms, self.attacker_initial())
        return self._closure

    @property
    def ambiguities(self) -> List[str]:
        self.closure()
        return self._lifter.ambiguities


def describe_event(ev, name_of) -> Tuple[str, str]:
    if isinstance(ev, StateChanged):
        return "state-transition", (f"conn={ev.conn_id:08x} peer={name_of(ev.peer)} role={ev.role.value} "
                                    f"{ev.old.value if ev.old else 'none'}->{ev.new.value} {ev.detail}".rstrip())
    if isinstance(ev, SessionEstablished):
        s = ev.secrets
        digest = hashlib.sha256(s.enc_i + s.enc_r + s.mac_i + s.mac_r).hexdigest()[:16]
        return "session", (f"conn={ev.conn_id:08x} peer={name_of(ev.peer)} role={ev.role.value} "
                           f"mode={s.mode.name} n1={s.n1.hex()} n2={s.n2.hex()} identity={s.peer_identity} "
                           f"keys={digest}")
    if isinstance(ev, AppDeliver):
        return "app-deliver", (f"conn={ev.conn_id:08x} from={name_of(ev.peer)} len={len(ev.data)} "
                               f"sha256={hashlib.sha256(ev.data).hexdigest()}")
    if isinstance(ev, SendDone):
        return "app-sent", f"conn={ev.conn_id:08x} to={name_of(ev.peer)} bytes={ev.size}"
    if isinstance(ev, DeviceEvent):
        return "device", f"{ev.kind} {name_of(ev.addr)} name={ev.name}"
    if isinstance(ev, ErrorEvent):
        peer = name_of(ev.peer) if ev.peer else "-"
        return "error", f"{ev.kind} conn={ev.conn_id:08x} peer={peer} {ev.detail}"
    return "event", repr(ev)


class Simulator:
    def __init__(self, scenario: Scenario, inner_provider: CryptoProvider | None = None):
        self.sc = scenario.validate()
        self.world = build_world(self.sc, inner_provider)
        self.medium = SimMedium(self.sc.link, self.sc.latency)
        self.trace: List[TraceEvent] = []
        self.frames: List[Frame] = []
        self.sent: List[SentRecord] = []
        self.delivered = []
        self.sessions = []
        self.command_errors = []
        self._seq = 0
        self.nodes: Dict[str, Node] = {}
        self._names = {spec.address: spec.name for spec in self.sc.nodes}
        if self.sc.attacker is not None:
            self._names[self.sc.attacker.address] = "attacker"
        self.medium.observers.append(self._on_medium)
        settings = NodeSettings(arq=self.sc.arq)
        for spec in self.sc.nodes:
            ep = self.medium.attach(spec.address)
            rng = random.Random(f"node:{self.sc.seed}:{spec.name}")
            self.nodes[spec.name] = Node(self.world.identities[spec.name], ep, rng, settings,
                                         listener=lambda ev, n=spec.name: self._on_node_event(n, ev))
        self.attacker = None
        if self.sc.attacker is not None:
            self.attacker = Attacker(self.medium, self.world.kit, self.world.provider,
                                     random.Random(f"attacker:{self.sc.seed}"), make_script(self.sc.attacker.script))
        self._commands = sorted(enumerate(self.sc.commands), key=lambda ic: (ic[1].at, ic[0]))
        self._payload_rng = random.Random(f"payload:{self.sc.seed}")

    def _name(self, addr: NodeAddress) -> str:
        return self._names.get(addr, str(addr))

    def _record(self, kind: str, node: str, detail: str) -> None:
        self._seq += 1
        self.trace.append(TraceEvent(self.medium.now, self._seq, kind, node, detail))

    def _on_medium(self, kind, frame: Frame, to):
        if kind == "sent":
            self.frames.append(frame)
        body = frame.payload.hex() if self.sc.trace_payloads else \
            f"len={len(frame.payload)} sha256={hashlib.sha256(frame.payload).hexdigest()[:16]}"
        target = self._name(to) if to is not None else self._name(frame.dest) if not frame.dest.is_broadcast else "*"
        self._record(f"frame-{kind}", self._name(frame.src), f"to={target} {body}")

    def _on_node_event(self, node: str, ev) -> None:
        kind, detail = describe_event(ev, self._name)
        self._record(kind, node, detail)
        if isinstance(ev, AppDeliver):
            self.delivered.append((self.medium.now, node, self._name(ev.peer), ev.conn_id, ev.data))
        elif isinstance(ev, SessionEstablished):
            self.sessions.append((node, ev))

    def _latest_conn(self, node: Node, peer: NodeAddress) -> Optional[Connection]:
        # the newest connection the node initiated towards peer
        cands = [c for c in node.connections.values() if c.peer == peer and c.role.value == "initiator"]
        return cands[-1] if cands else None

    def _execute(self, cmd, now: int) -> None:
        node = self.nodes[cmd.node]
        peer = self.nodes[cmd.peer].address
        try:
            if cmd.op == "connect":
                node.connect(peer, now, cmd.mode)
            elif cmd.op == "send":
                conn = self._latest_conn(node, peer)
                if conn is None:
                    raise SanetError(f"{cmd.node} has no connection to {cmd.peer}")
                for _ in range(cmd.count):
                    payload = self._payload_rng.randbytes(cmd.size)
                    node.send_secure(conn.conn_id, payload, now, peer)
                    self.sent.append(SentRecord(now, cmd.node, cmd.peer, conn.conn_id, payload))
            elif cmd.op == "close":
                conn = self._latest_conn(node, peer)
                if conn is not None:
                    node.close(conn.conn_id, now, peer)
        except SanetError as exc:
            self.command_errors.append((now, cmd.node, f"{cmd.op}: {type(exc).__name__}: {exc}"))
            self._record("error", cmd.node, f"command {cmd.op} {cmd.peer}: {type(exc).__name__}")

    def run(self) -> SimResult:
        sc = self.sc
        for node in self.nodes.values():
            node.start(0)
        ci = 0
        last, spins = -1, 0
        while True:
            cands = [t for t in (self.medium.next_due(),
                                 self.attacker.next_timer() if self.attacker else None) if t is not None]
            cands += [t for t in (n.next_timer() for n in self.nodes.values()) if t is not None]
            if ci < len(self._commands):
                cands.append(self._commands[ci][1].at)
            if not cands:
                break
            now = max(min(cands), self.medium.now)
            if now > sc.duration:
                break
            spins = spins + 1 if now == last else 0
            last = now
            if spins > MAX_SPINS:
                raise SanetError(f"simulation made no progress at t={now}")
            self.medium.advance(now)
            for node in self.nodes.values():
                node.poll(now)
            while ci < len(self._commands) and self._commands[ci][1].at <= now:
                self._execute(self._commands[ci][1], now)
                ci += 1
            if self.attacker:
                self.attacker.on_timer(now)
        return SimResult(sc, self.world, self.trace, self.nodes, self.frames, self.sent, self.delivered,
                         self.sessions, self.command_errors, self.attacker)


def run(scenario: Scenario, inner_provider: CryptoProvider | None = None) -> SimResult:
    return Simulator(scenario, inner_provider).run()
