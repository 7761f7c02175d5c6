"""Symbolic attacker knowledge for secrecy checking.

Captured frames are lifted into structured terms using the stack's own wire
formats. A ciphertext is only given structure when the run's
:class:`RecordingProvider` knows what produced it; otherwise it stays an
opaque atom. The closure is the least set containing the observed terms and
the attacker's initial keys, closed under:

* splitting tuples,
* public-key decryption with a held private key,
* symmetric decryption with a derivable key (keys may be KDF outputs, which
  are derivable when all KDF inputs are).

Hashes, MACs and signatures are atoms: nothing inverts them. Construction
is not materialised; :meth:`KnowledgeSet.derivable` answers it on demand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple, Union

from ..channel import Record
from ..crypto import Certificate, CryptoProvider
from ..errors import EncodingError, HandshakeError, IntegrityFailure, MalformedSegment
from ..handshake import HandshakeM1, HandshakeM2, HandshakeM3, decode_message
from ..manager import MSG_CLOSE, MSG_DATA, MSG_HELLO, MSG_HS_M1, MSG_HS_M3, PlatformHeader
from ..reliable import Reassembler, Segment
from ..transport import Frame


@dataclass(frozen=True)
class Atom:
    value: bytes


@dataclass(frozen=True)
class Tup:
    items: Tuple["Term", ...]


@dataclass(frozen=True)
class PrivKey:
    """The private half of the key whose public encoding is ``public``."""
    public: bytes


@dataclass(frozen=True)
class PkEnc:
    public: bytes
    plain: "Term"


@dataclass(frozen=True)
class Kdf:
    master: "Term"
    n1: "Term"
    n2: "Term"
    label: str


@dataclass(frozen=True)
class SymEnc:
    key: "Term"
    plain: "Term"


Term = Union[Atom, Tup, PrivKey, PkEnc, Kdf, SymEnc]


class RecordingProvider(CryptoProvider):
    """Delegating provider that remembers ciphertext and KDF provenance."""

    def __init__(self, inner: CryptoProvider):
        self.inner = inner
        self.name = inner.name
        self.pk_log: Dict[bytes, Tuple[bytes, bytes]] = {}
        self.sym_log: Dict[bytes, Tuple[bytes, bytes]] = {}
        self.kdf_log: Dict[bytes, Tuple[bytes, bytes, bytes, str]] = {}

    def generate_keypair(self, rng):
        return self.inner.generate_keypair(rng)

    def sign(self, private, data):
        return self.inner.sign(private, data)

    def verify(self, public, data, signature):
        return self.inner.verify(public, data, signature)

    def pk_encrypt(self, public, data, rng):
        ct = self.inner.pk_encrypt(public, data, rng)
        self.pk_log[ct] = (public, data)
        return ct

    def pk_decrypt(self, private, ciphertext):
        return self.inner.pk_decrypt(private, ciphertext)

    def kdf(self, master, n1, n2, label):
        out = self.inner.kdf(master, n1, n2, label)
        self.kdf_log[out] = (master, n1, n2, label)
        return out

    def cipher_encrypt(self, key, iv, plaintext):
        ct = self.inner.cipher_encrypt(key, iv, plaintext)
        self.sym_log[ct] = (key, plaintext)
        return ct


class Lifter:
    """Turns captured frames into terms; unparseable input becomes opaque atoms."""

    def __init__(self, provider: RecordingProvider | None = None):
        self.provider = provider
        self.ambiguities: List[str] = []
        self._reassembler = Reassembler(horizon=1 << 20)

    def _pk(self, ct: bytes) -> Term:
        if not ct:
            return Atom(b"")
        if self.provider is not None and ct in self.provider.pk_log:
            public, plain = self.provider.pk_log[ct]
            return PkEnc(public, Atom(plain))
        return Atom(ct)

    def _key(self, key: bytes) -> Term:
        if self.provider is not None and key in self.provider.kdf_log:
            master, n1, n2, label = self.provider.kdf_log[key]
            return Kdf(Atom(master), Atom(n1), Atom(n2), label)
        return Atom(key)

    def _sym(self, ct: bytes) -> Term:
        if self.provider is not None and ct in self.provider.sym_log:
            key, plain = self.provider.sym_log[ct]
            return SymEnc(self._key(key), Atom(plain))
        return Atom(ct)

    @staticmethod
    def cert(cert: Optional[Certificate]) -> Term:
        if cert is None:
            return Atom(b"")
        return Tup((Atom(cert.subject_addr.raw), Atom(cert.subject_name.encode("utf-8")),
                    Atom(cert.subject_public), Atom(cert.serial.to_bytes(8, "big")), Atom(cert.ca_signature)))

    def handshake(self, body: bytes) -> Term:
        msg = decode_message(body)
        if isinstance(msg, HandshakeM1):
            return Tup((Atom(msg.n1), self.cert(msg.cert_a), Atom(msg.psk_id.encode("utf-8"))))
        if isinstance(msg, HandshakeM2):
            return Tup((Atom(msg.n2), self._pk(msg.enc_k), self.cert(msg.cert_b), Atom(msg.sig_b), Atom(msg.mac)))
        assert isinstance(msg, HandshakeM3)
        return Tup((Atom(msg.sig_a), self._pk(msg.enc_k), Atom(msg.mac)))

    def message(self, message: bytes) -> Term:
        try:
            header, body = PlatformHeader.decode(message)
            head = Atom(message[:5])
            if header.msg_type == MSG_HELLO:
                return Tup((head, Atom(body)))
            if MSG_HS_M1 <= header.msg_type <= MSG_HS_M3:
                return Tup((head, self.handshake(body)))
            if header.msg_type in (MSG_DATA, MSG_CLOSE):
                try:
                    rec = Record.decode(body)
                except IntegrityFailure:
                    return Tup((head, Atom(body)))  # NoAuth plaintext or noise
                return Tup((head, Atom(rec.seq.to_bytes(8, "big")), Atom(rec.iv), self._sym(rec.ciphertext),
                            Atom(rec.tag)))
        except (EncodingError, HandshakeError) as exc:
            self.ambiguities.append(f"{type(exc).__name__}: {exc}")
            return Atom(message)
        self.ambiguities.append(f"unknown platform type {message[0]:#04x}")
        return Atom(message)

    def frames(self, frames: Iterable[Union[Frame, bytes]]) -> List[Term]:
        terms: List[Term] = []
        for f in frames:
            if isinstance(f, (bytes, bytearray)):
                f = Frame.decode(bytes(f))
            terms.append(Atom(f.payload))
            try:
                seg = Segment.decode(f.payload)
            except MalformedSegment as exc:
                self.ambiguities.append(f"segment: {exc}")
                continue
            if not seg.header.is_data:
                continue
            if seg.header.frag_count == 1:
                terms.append(self.message(seg.payload))
                continue
            # multi-fragment: lift once the attacker has seen every piece
            try:
                whole = self._reassembler.add(seg, (f.src, f.dest), 0)
            except Exception as exc:  # inconsistent fragment counts from noise
                self.ambiguities.append(f"reassembly: {exc}")
                continue
            if whole is not None:
                terms.append(self.message(whole))
        return terms


class KnowledgeSet:
    def __init__(self, terms: FrozenSet[Term]):
        self.terms = terms

    def __contains__(self, item) -> bool:
        if isinstance(item, (bytes, bytearray)):
            item = Atom(bytes(item))
        return self.derivable(item)

    def __len__(self):
        return len(self.terms)

    def __le__(self, other: "KnowledgeSet") -> bool:
        return self.terms <= other.terms

    def atoms(self) -> FrozenSet[bytes]:
        return frozenset(t.value for t in self.terms if isinstance(t, Atom))

    def derivable(self, term: Term) -> bool:
        return _derivable(term, self.terms)


def _derivable(term: Term, known: FrozenSet[Term] | set) -> bool:
    if term in known:
        return True
    if isinstance(term, Tup):
        return all(_derivable(t, known) for t in term.items)
    if isinstance(term, Kdf):
        return all(_derivable(t, known) for t in (term.master, term.n1, term.n2))
    if isinstance(term, PkEnc):
        return Atom(term.public) in known and _derivable(term.plain, known)
    if isinstance(term, SymEnc):
        return _derivable(term.key, known) and _derivable(term.plain, known)
    return False


def knowledge_closure(transcript: Iterable[Term], initial: Iterable[Term] = ()) -> KnowledgeSet:
    """Least fixed point of the analysis rules over ``transcript`` plus ``initial``."""
    known = set(initial) | set(transcript)
    for t in list(known):
        if isinstance(t, PrivKey):
            known.add(Atom(t.public))
    pending = list(known)
    locked: List[Term] = []  # encryptions whose key was not yet derivable
    while pending:
        new: List[Term] = []
        for t in pending:
            if isinstance(t, Tup):
                new.extend(t.items)
            elif isinstance(t, PkEnc):
                if PrivKey(t.public) in known:
                    new.append(t.plain)
                else:
                    locked.append(t)
            elif isinstance(t, SymEnc):
                if _derivable(t.key, known):
                    new.append(t.plain)
                else:
                    locked.append(t)
        fresh = [t for t in new if t not in known]
        known.update(fresh)
        if not fresh:
            # new atoms may unlock earlier encryptions
            retry = [t for t in locked
                     if (isinstance(t, PkEnc) and PrivKey(t.public) in known)
                     or (isinstance(t, SymEnc) and _derivable(t.key, known))]
            locked = [t for t in locked if t not in retry]
            fresh = [t.plain for t in retry if t.plain not in known]
            known.update(fresh)
        pending = fresh
    return KnowledgeSet(frozenset(known))
