"""Cryptographic provider interface and its two implementations.

The handshake and channel layers only ever talk to a :class:`CryptoProvider`.
:class:`RsaProvider` is the default suite (RSA-2048, OAEP-SHA256, PSS-SHA256,
AES-128-CBC, HMAC-SHA256) built on ``cryptography``. :class:`ToyRsaProvider`
is a pure-Python, fully seeded RSA used by the simulator so that every byte
of a run, key generation included, is reproducible. It is not for real use.

Key bytes are provider-independent: a public key is the canonical encoding
of ``(n, e)`` and a private key that of ``(n, e, d, p, q)``.
"""

from __future__ import annotations

import abc
import hashlib
import hmac as _hmac
import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, padding as sym_padding
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .encoding import decode_fields, decode_int, encode_fields, encode_int, encode_uint
from .errors import (
    DecryptFailure,
    EncodingError,
    IntegrityFailure,
    InvalidAddress,
    MalformedKey,
    UnknownLabel,
)
from .transport import NodeAddress

NONCE_LEN = 16
SESSION_KEY_LEN = 16
DIGEST_LEN = 32
BLOCK = 16

ENC_LABELS = ("ENC-I", "ENC-R")
MAC_LABELS = ("MAC-I", "MAC-R")
KDF_LABELS = ENC_LABELS + MAC_LABELS


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: bytes


def encode_public(n: int, e: int) -> bytes:
    return encode_fields([encode_int(n), encode_int(e)])


def encode_private(n: int, e: int, d: int, p: int, q: int) -> bytes:
    return encode_fields([encode_int(x) for x in (n, e, d, p, q)])


def decode_public(public: bytes) -> Tuple[int, int]:
    try:
        n, e = (decode_int(f) for f in decode_fields(public, 2))
    except EncodingError as exc:
        raise MalformedKey("bad public key encoding") from exc
    if n < 3 or e < 3:
        raise MalformedKey("degenerate public key")
    return n, e


def decode_private(private: bytes) -> Tuple[int, int, int, int, int]:
    try:
        n, e, d, p, q = (decode_int(f) for f in decode_fields(private, 5))
    except EncodingError as exc:
        raise MalformedKey("bad private key encoding") from exc
    if p * q != n:
        raise MalformedKey("private key factors do not match modulus")
    return n, e, d, p, q


def public_of(private: bytes) -> bytes:
    n, e, *_ = decode_private(private)
    return encode_public(n, e)


@dataclass(frozen=True)
class Certificate:
    subject_addr: NodeAddress
    subject_name: str
    subject_public: bytes
    serial: int
    ca_signature: bytes = b""

    def tbs(self) -> bytes:
        """Canonical encoding of the signed fields."""
        return encode_fields([self.subject_addr.raw, self.subject_name.encode("utf-8"),
                              self.subject_public, encode_uint(self.serial, 8)])

    def encode(self) -> bytes:
        return encode_fields([self.subject_addr.raw, self.subject_name.encode("utf-8"),
                              self.subject_public, encode_uint(self.serial, 8), self.ca_signature])

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        addr, name, pub, serial, sig = decode_fields(data, 5)
        if len(serial) != 8:
            raise EncodingError("certificate serial must be 8 bytes")
        try:
            return cls(NodeAddress(addr), name.decode("utf-8"), pub, int.from_bytes(serial, "big"), sig)
        except (UnicodeDecodeError, InvalidAddress) as exc:
            raise EncodingError(f"malformed certificate: {exc}") from exc


class CryptoProvider(abc.ABC):
    """Primitive roles consumed by the handshake and the secure channel."""

    name = "abstract"

    @abc.abstractmethod
    def generate_keypair(self, rng: random.Random) -> KeyPair: ...

    @abc.abstractmethod
    def sign(self, private: bytes, data: bytes) -> bytes: ...

    @abc.abstractmethod
    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool: ...

    @abc.abstractmethod
    def pk_encrypt(self, public: bytes, data: bytes, rng: random.Random) -> bytes: ...

    @abc.abstractmethod
    def pk_decrypt(self, private: bytes, ciphertext: bytes) -> bytes: ...

    def hash(self, data: bytes) -> bytes:
        return hashlib.sha256(data).digest()

    def hmac(self, key: bytes, data: bytes) -> bytes:
        return _hmac.new(key, data, hashlib.sha256).digest()

    def mac_equal(self, a: bytes, b: bytes) -> bool:
        return _hmac.compare_digest(a, b)

    def kdf(self, master: bytes, n1: bytes, n2: bytes, label: str) -> bytes:
        if label not in KDF_LABELS:
            raise UnknownLabel(label)
        out = self.hmac(master, label.encode("ascii") + b"\x00" + n1 + n2)
        return out[:16] if label in ENC_LABELS else out

    def random_bytes(self, rng: random.Random, n: int) -> bytes:
        return rng.randbytes(n)

    def nonce(self, rng: random.Random) -> bytes:
        return self.random_bytes(rng, NONCE_LEN)

    def session_key(self, rng: random.Random) -> bytes:
        return self.random_bytes(rng, SESSION_KEY_LEN)

    def cipher_encrypt(self, key: bytes, iv: bytes, plaintext: bytes) -> bytes:
        padder = sym_padding.PKCS7(128).padder()
        padded = padder.update(plaintext) + padder.finalize()
        enc = Cipher(algorithms.AES(key), modes.CBC(iv)).encryptor()
        return enc.update(padded) + enc.finalize()

    def cipher_decrypt(self, key: bytes, iv: bytes, ciphertext: bytes) -> bytes:
        """AES-128-CBC decrypt and strip PKCS#7 padding; every failure is an IntegrityFailure."""
        if not ciphertext or len(ciphertext) % BLOCK:
            raise IntegrityFailure("ciphertext length")
        dec = Cipher(algorithms.AES(key), modes.CBC(iv)).decryptor()
        padded = dec.update(ciphertext) + dec.finalize()
        unpadder = sym_padding.PKCS7(128).unpadder()
        try:
            return unpadder.update(padded) + unpadder.finalize()
        except ValueError as exc:
            raise IntegrityFailure("padding") from exc

    def issue_certificate(self, ca_private: bytes, subject_addr: NodeAddress, subject_name: str,
                          subject_public: bytes, serial: int) -> Certificate:
        cert = Certificate(subject_addr, subject_name, subject_public, serial)
        return Certificate(subject_addr, subject_name, subject_public, serial,
                           self.sign(ca_private, cert.tbs()))

    def verify_certificate(self, ca_public: bytes, cert: Certificate) -> bool:
        return self.verify(ca_public, cert.tbs(), cert.ca_signature)


@lru_cache(maxsize=256)
def _load_private(private: bytes) -> rsa.RSAPrivateKey:
    n, e, d, p, q = decode_private(private)
    nums = rsa.RSAPrivateNumbers(p, q, d, rsa.rsa_crt_dmp1(d, p), rsa.rsa_crt_dmq1(d, q),
                                 rsa.rsa_crt_iqmp(p, q), rsa.RSAPublicNumbers(e, n))
    try:
        return nums.private_key()
    except ValueError as exc:
        raise MalformedKey(str(exc)) from exc


@lru_cache(maxsize=256)
def _load_public(public: bytes) -> rsa.RSAPublicKey:
    n, e = decode_public(public)
    try:
        return rsa.RSAPublicNumbers(e, n).public_key()
    except ValueError as exc:
        raise MalformedKey(str(exc)) from exc


_OAEP = padding.OAEP(mgf=padding.MGF1(hashes.SHA256()), algorithm=hashes.SHA256(), label=None)
_PSS = padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=padding.PSS.DIGEST_LENGTH)


class RsaProvider(CryptoProvider):
    """Default suite backed by the ``cryptography`` package.

    Key generation, OAEP and PSS draw from the OS RNG, so the ``rng``
    arguments are accepted for interface compatibility only.
    """

    name = "default"

    def __init__(self, key_bits: int = 2048):
        self.key_bits = key_bits

    def generate_keypair(self, rng):
        key = rsa.generate_private_key(public_exponent=65537, key_size=self.key_bits)
        nums = key.private_numbers()
        n, e = nums.public_numbers.n, nums.public_numbers.e
        return KeyPair(encode_public(n, e), encode_private(n, e, nums.d, nums.p, nums.q))

    def sign(self, private, data):
        return _load_private(private).sign(data, _PSS, hashes.SHA256())

    def verify(self, public, data, signature):
        try:
            _load_public(public).verify(signature, data, _PSS, hashes.SHA256())
            return True
        except (InvalidSignature, MalformedKey, ValueError):
            return False

    def pk_encrypt(self, public, data, rng):
        return _load_public(public).encrypt(data, _OAEP)

    def pk_decrypt(self, private, ciphertext):
        try:
            return _load_private(private).decrypt(ciphertext, _OAEP)
        except ValueError as exc:
            raise DecryptFailure("OAEP decryption failed") from exc


# --- pure-Python seeded RSA -------------------------------------------------

_SMALL_PRIMES = [p for p in range(3, 2000, 2) if all(p % d for d in range(3, int(p ** 0.5) + 1, 2))]
_SHA256_DIGEST_INFO = bytes.fromhex("3031300d060960864801650304020105000420")


def _is_probable_prime(n: int, rng: random.Random, rounds: int = 32) -> bool:
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random, e: int) -> int:
    while True:
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        if cand % e != 1 and _is_probable_prime(cand, rng):
            return cand


def _mgf1(seed: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
        counter += 1
    return bytes(out[:length])


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


@lru_cache(maxsize=64)
def _toy_keygen(bits: int, seed_material: bytes) -> KeyPair:
    rng = random.Random(seed_material)
    e = 65537
    while True:
        p = _random_prime(bits // 2, rng, e)
        q = _random_prime(bits - bits // 2, rng, e)
        if p == q:
            continue
        n = p * q
        if n.bit_length() != bits:
            continue
        d = pow(e, -1, (p - 1) * (q - 1))
        return KeyPair(encode_public(n, e), encode_private(n, e, d, p, q))


class ToyRsaProvider(CryptoProvider):
    """Deterministic small-modulus RSA for tests and simulations.

    OAEP (SHA-256, MGF1-SHA-256, empty label) with the seed drawn from the
    caller's RNG, and deterministic PKCS#1 v1.5 SHA-256 signatures. Both are
    wire compatible with the standard schemes, which the test-suite uses as
    an independent check.
    """

    name = "toy"

    def __init__(self, key_bits: int = 1024):
        if key_bits < 8 * (2 * DIGEST_LEN + 2 + SESSION_KEY_LEN) or key_bits % 16:
            raise ValueError("modulus too small for OAEP-SHA256 over a session key")
        self.key_bits = key_bits

    def generate_keypair(self, rng):
        # keygen is memoised on the drawn seed so repeated scenarios stay fast
        return _toy_keygen(self.key_bits, rng.randbytes(32))

    @staticmethod
    def _k(n: int) -> int:
        return (n.bit_length() + 7) // 8

    def sign(self, private, data):
        n, e, d, p, q = decode_private(private)
        k = self._k(n)
        t = _SHA256_DIGEST_INFO + hashlib.sha256(data).digest()
        em = b"\x00\x01" + b"\xff" * (k - len(t) - 3) + b"\x00" + t
        return self._private_op(int.from_bytes(em, "big"), d, p, q).to_bytes(k, "big")

    def verify(self, public, data, signature):
        try:
            n, e = decode_public(public)
        except MalformedKey:
            return False
        k = self._k(n)
        if len(signature) != k:
            return False
        s = int.from_bytes(signature, "big")
        if s >= n:
            return False
        t = _SHA256_DIGEST_INFO + hashlib.sha256(data).digest()
        expected = b"\x00\x01" + b"\xff" * (k - len(t) - 3) + b"\x00" + t
        return _hmac.compare_digest(pow(s, e, n).to_bytes(k, "big"), expected)

    def pk_encrypt(self, public, data, rng):
        n, e = decode_public(public)
        k = self._k(n)
        h = DIGEST_LEN
        if len(data) > k - 2 * h - 2:
            raise ValueError("message too long for OAEP")
        lhash = hashlib.sha256(b"").digest()
        db = lhash + b"\x00" * (k - len(data) - 2 * h - 2) + b"\x01" + data
        seed = rng.randbytes(h)
        masked_db = _xor(db, _mgf1(seed, k - h - 1))
        masked_seed = _xor(seed, _mgf1(masked_db, h))
        m = int.from_bytes(b"\x00" + masked_seed + masked_db, "big")
        return pow(m, e, n).to_bytes(k, "big")

    def pk_decrypt(self, private, ciphertext):
        n, e, d, p, q = decode_private(private)
        k = self._k(n)
        h = DIGEST_LEN
        c = int.from_bytes(ciphertext, "big")
        if len(ciphertext) != k or c >= n:
            raise DecryptFailure("ciphertext does not match modulus")
        em = self._private_op(c, d, p, q).to_bytes(k, "big")
        masked_seed, masked_db = em[1:1 + h], em[1 + h:]
        seed = _xor(masked_seed, _mgf1(masked_db, h))
        db = _xor(masked_db, _mgf1(seed, k - h - 1))
        lhash = hashlib.sha256(b"").digest()
        rest = db[h:].lstrip(b"\x00")
        if em[0] != 0 or not _hmac.compare_digest(db[:h], lhash) or not rest or rest[0] != 1:
            raise DecryptFailure("OAEP decoding error")
        return rest[1:]

    @staticmethod
    def _private_op(c: int, d: int, p: int, q: int) -> int:
        mp = pow(c, d % (p - 1), p)
        mq = pow(c, d % (q - 1), q)
        h = (pow(q, -1, p) * (mp - mq)) % p
        return mq + h * q


def get_provider(name: str) -> CryptoProvider:
    if name == "default":
        return RsaProvider()
    if name == "toy":
        return ToyRsaProvider()
    raise ValueError(f"unknown crypto provider {name!r}")
