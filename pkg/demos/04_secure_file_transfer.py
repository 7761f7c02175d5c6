"""
Discovery and a secure file transfer
====================================

Nodes announce themselves with periodic beacons, pick the strongest
mode both sides support and move a file over the protected channel. Both
nodes run on one simulated medium here; the same code runs over UDP
multicast on loopback via the ``sanet`` command (see the README).
"""

import hashlib
import random
import tempfile
from pathlib import Path

from sanet.crypto import get_provider
from sanet.handshake import Credentials, Identity
from sanet.host import SimHost
from sanet.manager import ConnState
from sanet.transfer import FileService, send_file
from sanet.transport import LinkModel, NodeAddress

provider = get_provider("toy")
rng = random.Random(11)
ca = provider.generate_keypair(rng)


def device(name, addr, certified=True):
    addr = NodeAddress.parse(addr)
    if not certified:
        return Identity(addr, name, Credentials(ca_public=ca.public), provider)
    kp = provider.generate_keypair(rng)
    cert = provider.issue_certificate(ca.private, addr, name, kp.public, 1)
    return Identity(addr, name, Credentials(kp, cert, ca.public), provider)


host = SimHost(LinkModel(p_loss=0.05, seed=1))
alice = host.add_node("alice", device("alice", "02:00:00:00:00:01"), random.Random(1))
host.add_node("bob", device("bob", "02:00:00:00:00:02"), random.Random(2))
host.add_node("kiosk", device("kiosk", "02:00:00:00:00:03", certified=False), random.Random(3))

inbox = Path(tempfile.mkdtemp())
files = FileService(host, inbox)
host.start()
host.run_until(lambda: len(alice.devices) == 2, 5000)

# %% alice's device table after the first beacons.
for dev in alice.peers_table():
    print(dev.addr, dev.name, dev.state.value, sorted(m.name for m in dev.advertised_modes))

# %% Certified peer: mutual authentication. Uncertified peer: one-way only.
data = random.Random(5).randbytes(256 * 1024)
for dev in alice.peers_table():
    cid = alice.connect(dev.addr, host.now())
    conn = alice.connections[(dev.addr, cid)]
    host.run_until(lambda: conn.state is not ConnState.CONNECTING, 5000)
    digest = send_file(alice, cid, dev.addr, f"for-{dev.name}.bin", data, host.now())
    host.run_until(lambda: ("alice", dev.addr, cid) in files.replies, 60000)
    print(f"{dev.name}: mode={conn.mode.name} peer digest matches={files.replies[('alice', dev.addr, cid)] == digest}")

print("stored:", sorted(p.name for p in inbox.iterdir()))
print("contents intact:", hashlib.sha256((inbox / "for-bob.bin").read_bytes()).digest()
      == hashlib.sha256(data).digest())
