import random
import subprocess
import threading
import time

import pytest

from helpers import make_identity
from sanet.errors import Detached, SourceMismatch
from sanet.host import UdpHost
from sanet.manager import ConnState
from sanet.transport import BROADCAST, Frame, NodeAddress, UdpEndpoint
from udp_support import cli_cmd, free_port, requires_udp

A = NodeAddress.parse("02:00:00:00:00:01")
B = NodeAddress.parse("02:00:00:00:00:02")
C = NodeAddress.parse("02:00:00:00:00:03")

pytestmark = [pytest.mark.udp, requires_udp]


def wait_frame(ep, ms=2000):
    return ep.poll_frame(ep.now() + ms)


def test_unicast_broadcast_and_filtering():
    port = free_port()
    a, b, c = (UdpEndpoint(x, port=port) for x in (A, B, C))
    try:
        a.send_frame(Frame(B, A, b"to-b"))
        assert wait_frame(b).payload == b"to-b"
        a.send_frame(Frame(BROADCAST, A, b"all"))
        assert wait_frame(b).payload == b"all"
        # c never sees b's unicast, and nobody hears its own frames
        assert wait_frame(c).payload == b"all"
        assert c.poll_frame(c.now() + 200) is None
        assert a.poll_frame(a.now() + 200) is None
    finally:
        for ep in (a, b, c):
            ep.detach()


def test_endpoint_rules():
    ep = UdpEndpoint(A, port=free_port())
    try:
        with pytest.raises(SourceMismatch):
            ep.send_frame(Frame(B, C, b"x"))
    finally:
        ep.detach()
    with pytest.raises(Detached):
        ep.send_frame(Frame(B, A, b"x"))


def test_two_hosts_handshake_and_data():
    port = free_port()
    hosts = [UdpHost(port=port), UdpHost(port=port)]
    a = hosts[0].add_node("alice", make_identity("alice", A), random.Random(1))
    hosts[1].add_node("bob", make_identity("bob", B), random.Random(2))
    got = []
    hosts[1].handlers.append(lambda n, ev: got.append(getattr(ev, "data", None)))
    stop = threading.Event()

    def serve():
        while not stop.is_set():
            hosts[1].step(hosts[1].now() + 50)
            hosts[1].dispatch()
    for h in hosts:
        h.start()
    t = threading.Thread(target=serve, daemon=True)
    t.start()
    try:
        assert hosts[0].run_until(lambda: B in a.devices, 5000)
        cid = a.connect(B, hosts[0].now())
        assert hosts[0].run_until(lambda: a.find(cid).state is not ConnState.CONNECTING, 5000)
        assert a.find(cid).state is ConnState.ESTABLISHED
        a.send_secure(cid, b"over udp", hosts[0].now())
        assert hosts[0].run_until(lambda: b"over udp" in got, 5000)
    finally:
        stop.set()
        t.join(2)
        for h in hosts:
            h.close()


def test_cli_peers_over_udp(tmp_path):
    port = free_port()
    for name, addr, seed in (("ca", None, 1), ("alice", A, 2), ("bob", B, 3)):
        extra = ["--ca-key", tmp_path / "ca.key", "--addr", addr] if addr else []
        subprocess.run(cli_cmd("keygen", "--provider", "toy", "--seed", seed, "--out", tmp_path / name, *extra),
                       check=True, capture_output=True)
    for name, addr in (("alice", A), ("bob", B)):
        (tmp_path / f"{name}.toml").write_text(
            f'[node]\nname = "{name}"\naddress = "{addr}"\nprovider = "toy"\nkeypair = "{name}.key"\n'
            f'certificate = "{name}.cert"\nca = "ca.pub"\n[transport]\nkind = "udp"\nport = {port}\n')
    bob = subprocess.Popen(cli_cmd("run", "--config", tmp_path / "bob.toml", "--duration-ms", 6000),
                           stdout=subprocess.PIPE, text=True)
    try:
        time.sleep(0.3)
        out = subprocess.run(cli_cmd("peers", "--config", tmp_path / "alice.toml", "--listen-ms", 2500),
                             capture_output=True, text=True, timeout=20)
        assert out.returncode == 0
        assert any(line.split()[:3] == [str(B), "bob", "Discovered"] for line in out.stdout.splitlines())
    finally:
        bob.terminate()
        bob.wait(5)
