import hashlib
import random

import pytest

from helpers import make_identity
from sanet.host import SimHost
from sanet.manager import ConnState
from sanet.transfer import CHUNK, FileService, safe_name, send_file
from sanet.transport import LinkModel, NodeAddress

A = NodeAddress.parse("02:00:00:00:00:01")
B = NodeAddress.parse("02:00:00:00:00:02")


@pytest.mark.parametrize("raw,expected", [
    ("report.pdf", "report.pdf"), ("dir/sub/x.bin", "x.bin"), ("../../etc/passwd", "passwd"),
    ("..", "unnamed"), (".", "unnamed"), ("", "unnamed"), ("a\\..\\b.txt", "b.txt"), ("/", "unnamed"),
    ("nul\0byte", "unnamed"),
])
def test_safe_name(raw, expected):
    assert safe_name(raw) == expected


def transfer(tmp_path, name, data, link=None):
    host = SimHost(link or LinkModel())
    a = host.add_node("alice", make_identity("alice", A), random.Random(1))
    host.add_node("bob", make_identity("bob", B), random.Random(2))
    inbox = tmp_path / "inbox"
    service = FileService(host, inbox)
    host.start()
    assert host.run_until(lambda: B in a.devices, 3000)
    cid = a.connect(B, host.now())
    assert host.run_until(lambda: a.find(cid).state is ConnState.ESTABLISHED, 5000)
    digest = send_file(a, cid, B, name, data, host.now())
    assert host.run_until(lambda: ("alice", B, cid) in service.replies, 120000)
    return service, digest, inbox


def test_file_roundtrip(tmp_path):
    data = random.Random(5).randbytes(3 * CHUNK + 17)
    service, digest, inbox = transfer(tmp_path, "blob.bin", data, LinkModel(0.1, 0.05, 2, seed=3))
    assert digest == hashlib.sha256(data).hexdigest()
    (rec,) = service.received
    assert rec.ok and rec.size == len(data) and rec.digest == digest
    assert (inbox / "blob.bin").read_bytes() == data
    assert rec.line().endswith("match=yes")


def test_empty_file(tmp_path):
    service, _, inbox = transfer(tmp_path, "empty", b"")
    assert service.received[0].ok and (inbox / "empty").read_bytes() == b""


def test_hostile_name_stays_inside(tmp_path):
    service, _, inbox = transfer(tmp_path, "..", b"payload")
    assert (inbox / "unnamed").read_bytes() == b"payload"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["inbox"]
