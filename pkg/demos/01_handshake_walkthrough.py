"""
Walking through a mutually certified handshake
==============================================

Two devices, each holding a key pair and a certificate from a shared CA,
agree on a session key in three messages. This script drives the two
state machines by hand so every message can be inspected, then uses the
derived keys to protect a record.
"""

import random

from sanet.channel import ChannelState, open_record, seal
from sanet.crypto import get_provider
from sanet.handshake import (
    AuthMode, Credentials, Identity, Role, initiator_on_m2, initiator_start,
    responder_on_m1, responder_on_m3,
)
from sanet.transport import NodeAddress

# The toy provider is deterministic and quick; "default" gives RSA-2048.
provider = get_provider("toy")
rng = random.Random(2024)

ca = provider.generate_keypair(rng)
alice_addr = NodeAddress.parse("02:00:00:00:00:01")
bob_addr = NodeAddress.parse("02:00:00:00:00:02")


def enrol(name, addr):
    kp = provider.generate_keypair(rng)
    cert = provider.issue_certificate(ca.private, addr, name, kp.public, serial=1)
    return Identity(addr, name, Credentials(kp, cert, ca.public), provider)


alice, bob = enrol("alice", alice_addr), enrol("bob", bob_addr)
print("alice certificate verifies:", provider.verify_certificate(ca.public, alice.credentials.certificate))

# %% M1: alice sends a fresh nonce and her certificate.
m1, a_state = initiator_start(alice, bob_addr, AuthMode.MUTUAL_CERT, rng)
print(f"M1  {len(m1.encode()):5d} bytes  n1={m1.n1.hex()[:16]}...")

# %% M2: bob checks the certificate, picks K, encrypts it to alice and signs.
m2, b_state = responder_on_m1(bob, alice_addr, m1, rng)
print(f"M2  {len(m2.encode()):5d} bytes  n2={m2.n2.hex()[:16]}...  enc_k={len(m2.enc_k)} bytes")

# %% M3: alice opens K, checks bob's signature and confirms with her own.
m3, _ = initiator_on_m2(a_state, m2)
responder_on_m3(b_state, m3)
print(f"M3  {len(m3.encode()):5d} bytes")

print("phases:", a_state.phase.name, b_state.phase.name)
print("same session key:", a_state.session_key == b_state.session_key)
print("K absent from the wire:", a_state.session_key not in m1.encode() + m2.encode() + m3.encode())
print("alice sees:", a_state.secrets.peer_identity, "| bob sees:", b_state.secrets.peer_identity)

# %% The session secrets key an encrypt-then-MAC channel in each direction.
tx = ChannelState(a_state.secrets, Role.INITIATOR, provider, rng)
rx = ChannelState(b_state.secrets, Role.RESPONDER, provider, rng)
record = seal(tx, b"meet at the north gate")
print("record:", len(record.encode()), "bytes, seq", record.seq)
print("bob reads:", open_record(rx, record.encode()))

# A single flipped bit is caught before anything is decrypted.
tampered = bytearray(record.encode())
tampered[30] ^= 0x01
try:
    open_record(rx, bytes(tampered))
except Exception as exc:
    print("tampered record:", type(exc).__name__)
