"""Trace audits: agreement, key secrecy, responder authentication, delivery.

Each audit returns a list of human-readable violations; empty means pass.
"""

from __future__ import annotations

from collections import Counter
from typing import Dict, List, Tuple

from ..handshake import AuthMode, Role
from ..manager import ConnState
from .engine import SimResult


def _sessions_by_key(result: SimResult) -> Dict[Tuple[str, str, int, str], object]:
    out = {}
    for node, ev in result.sessions:
        out[(node, result.name_of(ev.peer), ev.conn_id, ev.role.value)] = ev.secrets
    return out


def agreement(result: SimResult) -> List[str]:
    """Both ends of every doubly-established session hold identical secrets."""
    violations = []
    sessions = _sessions_by_key(result)
    for (node, peer, cid, role), secrets in sessions.items():
        if role != Role.RESPONDER.value:
            continue
        other = sessions.get((peer, node, cid, Role.INITIATOR.value))
        if other is None:
            continue
        mine = (secrets.enc_i, secrets.enc_r, secrets.mac_i, secrets.mac_r, secrets.n1, secrets.n2, secrets.mode)
        theirs = (other.enc_i, other.enc_r, other.mac_i, other.mac_r, other.n1, other.n2, other.mode)
        if mine != theirs:
            violations.append(f"conn {cid:08x} {peer}->{node}: secrets disagree")
    # injective sessions per node
    for name in result.nodes:
        pairs = Counter((s.n1, s.n2) for n, ev in result.sessions if n == name for s in [ev.secrets])
        for pair, count in pairs.items():
            if count > 1:
                violations.append(f"{name}: {count} sessions share (n1, n2)")
    return violations


def secrecy(result: SimResult, use_closure: bool = True) -> List[str]:
    """No session key appears in any frame or in the attacker's knowledge closure."""
    violations = []
    keys = result.session_keys()
    blobs = [f.encode() for f in result.frames]
    for k in keys:
        if any(k in b for b in blobs):
            violations.append(f"session key {k.hex()} appears in a transmitted frame")
    if use_closure and keys:
        closure = result.closure()
        for k in keys:
            if k in closure:
                violations.append(f"session key {k.hex()} is derivable by the attacker")
    return violations


def authentication(result: SimResult) -> List[str]:
    """A responder that names an honest initiator must match a session that initiator ran."""
    violations = []
    honest = {spec.name: spec for spec in result.scenario.nodes if spec.cert == "trusted"}
    for node, ev in result.sessions:
        if ev.role is not Role.RESPONDER:
            continue
        s = ev.secrets
        if s.mode not in (AuthMode.MUTUAL_CERT, AuthMode.ONE_WAY_CERT) or s.peer_identity not in honest:
            continue
        claimed = result.nodes[s.peer_identity]
        me = result.nodes[node].address
        match = [h for h in claimed.handshakes
                 if h.role is Role.INITIATOR and h.peer == me and h.n1 == s.n1 and h.n2 == s.n2
                 and h.secrets is not None and h.secrets.enc_i == s.enc_i]
        if not match:
            violations.append(f"{node} accepted {s.peer_identity} (n1={s.n1.hex()[:8]}) without a matching run")
        if ev.peer != claimed.address:
            violations.append(f"{node} accepted {s.peer_identity} from address {ev.peer}")
    return violations


def delivery(result: SimResult) -> List[str]:
    """Every message an honest node sent was delivered to its peer exactly once, intact."""
    violations = []
    got = Counter((d[1], d[2], d[3], d[4]) for d in result.delivered)
    for rec in result.sent:
        n = got.get((rec.peer, rec.node, rec.conn_id, rec.payload), 0)
        if n != 1:
            violations.append(f"{rec.node}->{rec.peer} {len(rec.payload)}B sent at {rec.t} delivered {n} times")
    sent = Counter((r.peer, r.node, r.conn_id, r.payload) for r in result.sent)
    for key, n in got.items():
        if sent.get(key, 0) == 0:
            violations.append(f"{key[0]} received {len(key[3])}B from {key[1]} that was never sent")
    return violations


def _state(result: SimResult, node: str, peer: str, role: Role) -> List[ConnState]:
    return [c.state for c in result.connections(node, peer) if c.role is role]


def established_pair(result: SimResult, a: str, b: str) -> bool:
    """True if some connection a->b is Established (or was Closed after being Established) on both sides."""
    for conn in result.connections(a, b):
        if conn.role is not Role.INITIATOR or ConnState.ESTABLISHED not in conn.history:
            continue
        other = result.nodes[b].connections.get((result.address_of(a), conn.conn_id))
        if other is not None and ConnState.ESTABLISHED in other.history:
            return True
    return False


CHECKS = {
    "agreement": agreement,
    "secrecy": secrecy,
    "authentication": authentication,
    "delivery": delivery,
}


def evaluate(result: SimResult) -> List[Tuple[str, bool, str]]:
    """Run the expectations declared in the scenario; returns (name, passed, detail) rows."""
    rows = []
    expect = result.scenario.expect
    for pair in expect.get("established", []):
        ok = established_pair(result, pair[0], pair[1])
        rows.append((f"established {pair[0]}->{pair[1]}", ok, ""))
    for pair in expect.get("not_established", []):
        ok = not established_pair(result, pair[0], pair[1])
        responder_up = any(ConnState.ESTABLISHED in c.history for c in result.connections(pair[1], pair[0])
                           if c.role is Role.RESPONDER)
        ok = ok and not responder_up
        rows.append((f"not-established {pair[0]}->{pair[1]}", ok, ""))
    for name, fn in CHECKS.items():
        if expect.get(name, name != "delivery"):
            v = fn(result)
            rows.append((name, not v, "; ".join(v[:3])))
    return rows
