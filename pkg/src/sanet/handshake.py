"""Three-message mutual authentication and session key transport.

MutualCert flow (initiator A, responder B)::

    A -> B   M1: n1, cert_A
    B -> A   M2: n2, enc_k = {K}Pk(A), cert_B, sig_B = Sign_B(H(n1, K, enc_k))
    A -> B   M3: sig_A = Sign_A(H(n1, n2, K, enc_k))

K never leaves B in clear; both sides derive channel keys from
``kdf(K, n1, n2, label)``. The weaker modes reuse the same message slots:

* OneWayCert -- only one party is certified and that party receives the
  encrypted key. If A holds the certificate, M2 carries ``{K}Pk(A)`` and M3
  a MAC proving A decrypted it. If only B does, M2 carries cert_B and A
  chooses K, sending ``{K}Pk(B)`` in M3 under the same MAC.
* PresharedKey -- M2/M3 carry HMACs under the shared key with distinct
  direction labels; the master secret is ``HMAC(psk, "MS" || n1 || n2)``.
* NoAuth -- M1 only announces the connection; there is no security layer.

Every state machine is pure: it consumes a message and returns the reply,
raising a :class:`~sanet.errors.HandshakeError` (or a crypto error) and
moving to ``FAILED`` on any check that does not pass. ``FAILED`` is absorbing.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Tuple, Union

from .crypto import Certificate, CryptoProvider, KeyPair, SESSION_KEY_LEN
from .encoding import decode_fields, encode_fields
from .errors import (
    BadCertificate,
    CryptoError,
    EncodingError,
    HandshakeError,
    HandshakeTimeout,
    InvalidPhase,
    Malformed,
    MissingCredentials,
    SignatureInvalid,
    StaleNonce,
    UnsupportedMode,
)
from .transport import NodeAddress

TAG_M1 = 0x02
TAG_M2 = 0x03
TAG_M3 = 0x04

HANDSHAKE_TIMEOUT = 3000

ANONYMOUS = "anonymous"


class AuthMode(enum.IntEnum):
    NO_AUTH = 0
    MUTUAL_CERT = 1
    ONE_WAY_CERT = 2
    PRESHARED_KEY = 3


class Role(enum.Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


class Phase(enum.Enum):
    START = "Start"
    AWAIT_M2 = "AwaitM2"
    AWAIT_M3 = "AwaitM3"
    ESTABLISHED = "Established"
    FAILED = "Failed"


@dataclass
class Credentials:
    keypair: Optional[KeyPair] = None
    certificate: Optional[Certificate] = None
    ca_public: Optional[bytes] = None
    psk: Optional[bytes] = None
    psk_id: str = ""

    @property
    def has_cert(self) -> bool:
        return self.keypair is not None and self.certificate is not None and self.ca_public is not None

    @property
    def has_psk(self) -> bool:
        return bool(self.psk)

    def advertised_modes(self) -> FrozenSet[AuthMode]:
        """Modes in which this node can act as a credentialed party."""
        modes = {AuthMode.NO_AUTH, AuthMode.ONE_WAY_CERT}
        if self.has_cert:
            modes.add(AuthMode.MUTUAL_CERT)
        if self.has_psk:
            modes.add(AuthMode.PRESHARED_KEY)
        return frozenset(modes)


@dataclass
class Identity:
    address: NodeAddress
    name: str
    credentials: Credentials
    provider: CryptoProvider
    require_auth: bool = False


def select_mode(local: Credentials, peer_advertised) -> AuthMode:
    local_cert = local.has_cert
    peer_cert = AuthMode.MUTUAL_CERT in peer_advertised
    if local_cert and peer_cert:
        return AuthMode.MUTUAL_CERT
    if local_cert or peer_cert:
        return AuthMode.ONE_WAY_CERT
    if local.has_psk and AuthMode.PRESHARED_KEY in peer_advertised:
        return AuthMode.PRESHARED_KEY
    return AuthMode.NO_AUTH


# --- messages ----------------------------------------------------------------

@dataclass(frozen=True)
class HandshakeM1:
    mode: AuthMode
    n1: bytes
    cert_a: Optional[Certificate] = None
    psk_id: str = ""

    def encode(self) -> bytes:
        return bytes([TAG_M1, self.mode]) + encode_fields(
            [self.n1, self.cert_a.encode() if self.cert_a else b"", self.psk_id.encode("utf-8")])


@dataclass(frozen=True)
class HandshakeM2:
    mode: AuthMode
    n2: bytes
    enc_k: bytes = b""
    cert_b: Optional[Certificate] = None
    sig_b: bytes = b""
    mac: bytes = b""

    def encode(self) -> bytes:
        return bytes([TAG_M2, self.mode]) + encode_fields(
            [self.n2, self.enc_k, self.cert_b.encode() if self.cert_b else b"", self.sig_b, self.mac])


@dataclass(frozen=True)
class HandshakeM3:
    mode: AuthMode
    sig_a: bytes = b""
    enc_k: bytes = b""
    mac: bytes = b""

    def encode(self) -> bytes:
        return bytes([TAG_M3, self.mode]) + encode_fields([self.sig_a, self.enc_k, self.mac])


HandshakeMessage = Union[HandshakeM1, HandshakeM2, HandshakeM3]


def _opt_cert(raw: bytes) -> Optional[Certificate]:
    return Certificate.decode(raw) if raw else None


def decode_message(data: bytes) -> HandshakeMessage:
    if len(data) < 2:
        raise Malformed("handshake message too short")
    tag = data[0]
    try:
        mode = AuthMode(data[1])
    except ValueError as exc:
        raise Malformed(f"unknown mode {data[1]}") from exc
    try:
        if tag == TAG_M1:
            n1, cert, psk_id = decode_fields(data[2:], 3)
            return HandshakeM1(mode, n1, _opt_cert(cert), psk_id.decode("utf-8"))
        if tag == TAG_M2:
            n2, enc_k, cert, sig, mac = decode_fields(data[2:], 5)
            return HandshakeM2(mode, n2, enc_k, _opt_cert(cert), sig, mac)
        if tag == TAG_M3:
            sig, enc_k, mac = decode_fields(data[2:], 3)
            return HandshakeM3(mode, sig, enc_k, mac)
    except (EncodingError, UnicodeDecodeError) as exc:
        raise Malformed(str(exc)) from exc
    raise Malformed(f"unknown handshake tag {tag:#04x}")


# --- session state -------------------------------------------------------------

@dataclass(frozen=True)
class SessionSecrets:
    enc_i: bytes
    enc_r: bytes
    mac_i: bytes
    mac_r: bytes
    n1: bytes
    n2: bytes
    mode: AuthMode
    peer_identity: str


def derive_secrets(provider: CryptoProvider, master: bytes, n1: bytes, n2: bytes,
                   mode: AuthMode, peer_identity: str) -> SessionSecrets:
    k = lambda label: provider.kdf(master, n1, n2, label)  # noqa: E731
    return SessionSecrets(k("ENC-I"), k("ENC-R"), k("MAC-I"), k("MAC-R"), n1, n2, mode, peer_identity)


@dataclass
class HandshakeState:
    role: Role
    identity: Identity
    peer: NodeAddress
    mode: AuthMode
    rng: random.Random
    phase: Phase = Phase.START
    n1: bytes = b""
    n2: bytes = b""
    session_key: bytes = b""
    enc_k: bytes = b""
    peer_cert: Optional[Certificate] = None
    secrets: Optional[SessionSecrets] = None
    deadline: Optional[int] = None
    failure: Optional[str] = None
    history: list = field(default_factory=list)

    def _goto(self, phase: Phase):
        self.history.append(phase)
        self.phase = phase

    def fail(self, reason: str):
        if self.phase is not Phase.FAILED:
            self._goto(Phase.FAILED)
            self.failure = reason

    @property
    def provider(self) -> CryptoProvider:
        return self.identity.provider

    @property
    def creds(self) -> Credentials:
        return self.identity.credentials


def _guard(state: HandshakeState, expected: Phase, fn):
    if state.phase is Phase.FAILED:
        raise InvalidPhase("session already failed")
    if state.phase is not expected:
        raise InvalidPhase(f"expected {expected.value}, in {state.phase.value}")
    try:
        return fn()
    except (HandshakeError, CryptoError) as exc:
        state.fail(f"{type(exc).__name__}: {exc}")
        raise


def _cert_ok(state: HandshakeState, cert: Optional[Certificate], addr: NodeAddress) -> Certificate:
    if cert is None:
        raise BadCertificate("certificate missing")
    if state.creds.ca_public is None:
        raise UnsupportedMode("no trusted CA configured")
    if not state.provider.verify_certificate(state.creds.ca_public, cert):
        raise BadCertificate(f"certificate for {cert.subject_name!r} not issued by trusted CA")
    if cert.subject_addr != addr:
        raise BadCertificate(f"certificate bound to {cert.subject_addr}, peer is {addr}")
    return cert


def _h(provider: CryptoProvider, *fields: bytes) -> bytes:
    return provider.hash(encode_fields(fields))


def _confirm_mac(provider, key, n1, n2, enc_k) -> bytes:
    return provider.hmac(provider.kdf(key, n1, n2, "MAC-I"), n1 + n2 + enc_k)


def _psk_master(provider, psk, n1, n2) -> bytes:
    return provider.hmac(psk, b"MS" + n1 + n2)[:SESSION_KEY_LEN]


def initiator_start(identity: Identity, peer: NodeAddress, mode: AuthMode, rng: random.Random,
                    now: int = 0, timeout: int = HANDSHAKE_TIMEOUT) -> Tuple[HandshakeM1, HandshakeState]:
    creds = identity.credentials
    if mode is AuthMode.MUTUAL_CERT and not creds.has_cert:
        raise MissingCredentials("MutualCert requires a certificate and private key")
    if mode is AuthMode.PRESHARED_KEY and not creds.has_psk:
        raise MissingCredentials("PresharedKey requires a shared key")
    if mode is AuthMode.ONE_WAY_CERT and creds.ca_public is None and not creds.has_cert:
        raise MissingCredentials("OneWayCert requires a certificate or a trusted CA key")
    state = HandshakeState(Role.INITIATOR, identity, peer, mode, rng)
    state.n1 = identity.provider.nonce(rng)
    cert = creds.certificate if mode in (AuthMode.MUTUAL_CERT, AuthMode.ONE_WAY_CERT) and creds.has_cert else None
    m1 = HandshakeM1(mode, state.n1, cert, creds.psk_id if mode is AuthMode.PRESHARED_KEY else "")
    if mode is AuthMode.NO_AUTH:
        state._goto(Phase.ESTABLISHED)
    else:
        state._goto(Phase.AWAIT_M2)
        state.deadline = now + timeout
    return m1, state


def responder_on_m1(identity: Identity, src: NodeAddress, m1: HandshakeM1, rng: random.Random,
                    now: int = 0, timeout: int = HANDSHAKE_TIMEOUT) -> Tuple[Optional[HandshakeM2], HandshakeState]:
    """Handle M1. Returns ``(None, state)`` for NoAuth, which needs no reply."""
    state = HandshakeState(Role.RESPONDER, identity, src, m1.mode, rng)
    state.n1 = m1.n1

    def run():
        p, creds = identity.provider, identity.credentials
        if len(m1.n1) != 16:
            raise Malformed("n1 must be 16 bytes")
        mode = m1.mode
        if mode is AuthMode.NO_AUTH:
            if identity.require_auth:
                raise UnsupportedMode("unauthenticated connections refused")
            state._goto(Phase.ESTABLISHED)
            return None
        state.n2 = p.nonce(rng)
        if mode is AuthMode.MUTUAL_CERT:
            if not creds.has_cert:
                raise UnsupportedMode("no certificate for MutualCert")
            state.peer_cert = _cert_ok(state, m1.cert_a, src)
            state.session_key = p.session_key(rng)
            state.enc_k = p.pk_encrypt(state.peer_cert.subject_public, state.session_key, rng)
            sig = p.sign(creds.keypair.private, _h(p, m1.n1, state.session_key, state.enc_k))
            m2 = HandshakeM2(mode, state.n2, state.enc_k, creds.certificate, sig)
        elif mode is AuthMode.ONE_WAY_CERT:
            if m1.cert_a is not None:
                state.peer_cert = _cert_ok(state, m1.cert_a, src)
                state.session_key = p.session_key(rng)
                state.enc_k = p.pk_encrypt(state.peer_cert.subject_public, state.session_key, rng)
                m2 = HandshakeM2(mode, state.n2, state.enc_k)
            else:
                if not creds.has_cert:
                    raise UnsupportedMode("OneWayCert needs one certified party")
                m2 = HandshakeM2(mode, state.n2, cert_b=creds.certificate)
        elif mode is AuthMode.PRESHARED_KEY:
            if not creds.has_psk or m1.psk_id != creds.psk_id:
                raise UnsupportedMode(f"no shared key for id {m1.psk_id!r}")
            m2 = HandshakeM2(mode, state.n2, mac=p.hmac(creds.psk, b"M2" + m1.n1 + state.n2))
        else:
            raise UnsupportedMode(str(mode))
        state._goto(Phase.AWAIT_M3)
        state.deadline = now + timeout
        return m2

    return _guard(state, Phase.START, run), state


def initiator_on_m2(state: HandshakeState, m2: HandshakeM2) -> Tuple[HandshakeM3, SessionSecrets]:
    def run():
        p, creds = state.provider, state.creds
        if m2.mode is not state.mode:
            raise Malformed(f"mode {m2.mode.name} does not match {state.mode.name}")
        if len(m2.n2) != 16:
            raise Malformed("n2 must be 16 bytes")
        if m2.n2 == state.n1:
            raise StaleNonce("responder nonce equals our own")
        n1, n2 = state.n1, m2.n2
        state.n2 = n2
        if state.mode is AuthMode.MUTUAL_CERT:
            state.peer_cert = _cert_ok(state, m2.cert_b, state.peer)
            k = p.pk_decrypt(creds.keypair.private, m2.enc_k)
            if not p.verify(state.peer_cert.subject_public, _h(p, n1, k, m2.enc_k), m2.sig_b):
                raise SignatureInvalid("responder signature does not cover our nonce and key")
            state.session_key, state.enc_k = k, m2.enc_k
            m3 = HandshakeM3(state.mode, sig_a=p.sign(creds.keypair.private, _h(p, n1, n2, k, m2.enc_k)))
            peer = state.peer_cert.subject_name
        elif state.mode is AuthMode.ONE_WAY_CERT:
            if creds.has_cert:
                k = p.pk_decrypt(creds.keypair.private, m2.enc_k)
                state.session_key, state.enc_k = k, m2.enc_k
                m3 = HandshakeM3(state.mode, mac=_confirm_mac(p, k, n1, n2, m2.enc_k))
                peer = ANONYMOUS
            else:
                state.peer_cert = _cert_ok(state, m2.cert_b, state.peer)
                k = p.session_key(state.rng)
                enc_k = p.pk_encrypt(state.peer_cert.subject_public, k, state.rng)
                state.session_key, state.enc_k = k, enc_k
                m3 = HandshakeM3(state.mode, enc_k=enc_k, mac=_confirm_mac(p, k, n1, n2, enc_k))
                peer = state.peer_cert.subject_name
        elif state.mode is AuthMode.PRESHARED_KEY:
            if not p.mac_equal(m2.mac, p.hmac(creds.psk, b"M2" + n1 + n2)):
                raise SignatureInvalid("M2 MAC does not verify under the shared key")
            state.session_key = _psk_master(p, creds.psk, n1, n2)
            m3 = HandshakeM3(state.mode, mac=p.hmac(creds.psk, b"M3" + n2 + n1))
            peer = f"psk:{creds.psk_id}"
        else:
            raise UnsupportedMode(str(state.mode))
        state.secrets = derive_secrets(p, state.session_key, n1, n2, state.mode, peer)
        state._goto(Phase.ESTABLISHED)
        return m3, state.secrets

    return _guard(state, Phase.AWAIT_M2, run)


def responder_on_m3(state: HandshakeState, m3: HandshakeM3, now: Optional[int] = None) -> SessionSecrets:
    def run():
        if now is not None and state.deadline is not None and now >= state.deadline:
            raise HandshakeTimeout("M3 arrived after the handshake deadline")
        p, creds = state.provider, state.creds
        if m3.mode is not state.mode:
            raise Malformed(f"mode {m3.mode.name} does not match {state.mode.name}")
        n1, n2 = state.n1, state.n2
        if state.mode is AuthMode.MUTUAL_CERT:
            body = _h(p, n1, n2, state.session_key, state.enc_k)
            if not p.verify(state.peer_cert.subject_public, body, m3.sig_a):
                raise SignatureInvalid("initiator signature does not cover this session")
            peer = state.peer_cert.subject_name
        elif state.mode is AuthMode.ONE_WAY_CERT:
            if state.peer_cert is not None:
                expected = _confirm_mac(p, state.session_key, n1, n2, state.enc_k)
                peer = state.peer_cert.subject_name
            else:
                state.session_key = p.pk_decrypt(creds.keypair.private, m3.enc_k)
                state.enc_k = m3.enc_k
                expected = _confirm_mac(p, state.session_key, n1, n2, m3.enc_k)
                peer = ANONYMOUS
            if not p.mac_equal(m3.mac, expected):
                raise SignatureInvalid("key confirmation MAC mismatch")
        elif state.mode is AuthMode.PRESHARED_KEY:
            if not p.mac_equal(m3.mac, p.hmac(creds.psk, b"M3" + n2 + n1)):
                raise SignatureInvalid("M3 MAC does not verify under the shared key")
            state.session_key = _psk_master(p, creds.psk, n1, n2)
            peer = f"psk:{creds.psk_id}"
        else:
            raise UnsupportedMode(str(state.mode))
        state.secrets = derive_secrets(p, state.session_key, n1, n2, state.mode, peer)
        state._goto(Phase.ESTABLISHED)
        return state.secrets

    return _guard(state, Phase.AWAIT_M3, run)


def check_timeout(state: HandshakeState, now: int) -> bool:
    """Fail a pending session whose deadline has passed; returns True if it just timed out."""
    if state.phase in (Phase.AWAIT_M2, Phase.AWAIT_M3) and state.deadline is not None and now >= state.deadline:
        state.fail("HandshakeTimeout: no reply before deadline")
        return True
    return False
