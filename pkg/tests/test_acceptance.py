"""The nine acceptance criteria, one test each, each printing a single verdict line."""

import itertools
import random
import subprocess
import time
from collections import Counter, defaultdict

import pytest

from helpers import LinkNet, make_identity
from sanet.channel import ChannelState, open_record, seal
from sanet.cli import bundled_scenarios, main
from sanet.crypto import ToyRsaProvider
from sanet.errors import IntegrityFailure, ReplayDetected
from sanet.handshake import AuthMode, Role, derive_secrets, select_mode
from sanet.reliable import SEGMENT_CAPACITY, ArqPolicy, Reassembler, ReliableLink, Segment, fragment
from sanet.sim import audit
from sanet.sim.corpus import attack, attack_scripts, happy_path
from sanet.sim.engine import run
from sanet.transport import LinkModel, NodeAddress, SimMedium
from udp_support import cli_cmd, free_port, requires_udp

A = NodeAddress.parse("02:00:00:00:00:01")
B = NodeAddress.parse("02:00:00:00:00:02")
ATTACK_SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number} {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def attack_runs():
    return [(script, seed, run(attack(script, seed=seed))) for script in attack_scripts() for seed in ATTACK_SEEDS]


def test_1_handshake_agreement(report):
    start = time.perf_counter()
    losses = (0.0, 0.1, 0.3)
    established = violations = 0
    for i in range(1000):
        r = run(happy_path(AuthMode.MUTUAL_CERT, seed=i, p_loss=losses[i % 3], sends=0))
        if not audit.established_pair(r, "alice", "bob"):
            continue
        established += 1
        by_role = {ev.role: ev.secrets for _, ev in r.sessions}
        a, b = by_role[Role.INITIATOR], by_role[Role.RESPONDER]
        same = (a.enc_i, a.enc_r, a.mac_i, a.mac_r, a.n1, a.n2, a.mode) == \
               (b.enc_i, b.enc_r, b.mac_i, b.mac_r, b.n1, b.n2, b.mode)
        violations += (not same) + len(audit.agreement(r))
    elapsed = time.perf_counter() - start
    report(1, "handshake agreement", violations == 0 and elapsed < 60 and established > 0,
           f"1000 runs, {established} fully established, {violations} violations, {elapsed:.1f}s")


def test_2_key_secrecy(report, attack_runs):
    violations, keys = [], 0
    for script, seed, r in attack_runs:
        assert r.world.kit is not None and not r.scenario.attacker.holds_keys_of
        keys += len(r.session_keys())
        violations += [f"{script}/{seed}: {v}" for v in audit.secrecy(r)]
    scripts = sorted({s for s, _, _ in attack_runs})
    report(2, "key secrecy", not violations and len(scripts) >= 8 and keys > 0,
           f"{len(scripts)} scripts x {len(ATTACK_SEEDS)} seeds, {keys} session keys checked, "
           f"{len(violations)} violations {violations[:2]}")


def test_3_authentication(report, attack_runs):
    violations, accepted = [], 0
    for script, seed, r in attack_runs:
        accepted += sum(1 for _, ev in r.sessions if ev.role is Role.RESPONDER)
        violations += [f"{script}/{seed}: {v}" for v in audit.authentication(r)]
    report(3, "authentication soundness", not violations,
           f"{len(attack_runs)} attacker runs, {accepted} responder acceptances audited, "
           f"{len(violations)} violations {violations[:2]}")


def test_4_reliability(report):
    policy = ArqPolicy()
    problems, sender_failures, worst = [], 0, 0
    for seed in (1, 2, 3):
        medium = SimMedium(LinkModel(0.3, 0.1, 4, seed))
        transmissions = Counter()

        def count(frame):
            seg = Segment.decode(frame.payload)
            if seg.header.is_data and frame.src == A:
                transmissions[seg.header.msg_id] += 1
            return [frame]
        medium.interceptor = count
        net = LinkNet(medium, [ReliableLink(A, policy, random.Random(seed)),
                               ReliableLink(B, policy, random.Random(seed + 100))])
        rnd = random.Random(seed)
        msgs = [rnd.randbytes(10 * 1024) for _ in range(200)]
        ids = {net.send(A, B, m): m for m in msgs}
        net.run()
        got = Counter(d.message for d in net.delivered(B))
        if got != Counter(msgs):
            problems.append(f"seed {seed}: delivered {sum(got.values())}/200, mismatch")
        for msg_id, m in ids.items():
            bound = len(fragment(m)) * (policy.max_retries + 1)
            worst = max(worst, transmissions[msg_id])
            if transmissions[msg_id] > bound:
                problems.append(f"seed {seed}: msg {msg_id} used {transmissions[msg_id]} > {bound}")
        sender_failures += len(net.failed(A))
    report(4, "reliability", not problems,
           f"3 seeds x 200 x 10KiB at p_loss=0.3 p_dup=0.1 reorder=4: {len(problems)} problems {problems[:2]}; "
           f"max {worst} data transmissions/message (bound {7 * (policy.max_retries + 1)}); "
           f"{sender_failures} sender-side give-ups after full receipt")


def test_5_fragmentation(report):
    rnd = random.Random(2024)
    cap = SEGMENT_CAPACITY
    boundaries = {k * cap + d for k in range(1, 45) for d in (-1, 0, 1)} | {65536}
    lengths = sorted(set(range(21)) | boundaries | {rnd.randint(0, 65536) for _ in range(2200)})
    failures, orders = [], 0
    for n in lengths:
        msg = rnd.randbytes(n)
        frags = fragment(msg, msg_id=n & 0xFFFF)
        perms = itertools.permutations(frags) if len(frags) <= 4 else [rnd.sample(frags, len(frags))]
        for order in perms:
            orders += 1
            buf = Reassembler()
            outs = [buf.add(s, A, 0) for s in order]
            if outs[-1] != msg or any(o is not None for o in outs[:-1]):
                failures.append(n)
                break
    random_count = len(lengths) - len(set(range(21)) | boundaries)
    report(5, "fragmentation identity", not failures and random_count >= 2000,
           f"{len(lengths)} lengths ({random_count} random), {orders} delivery orders, {len(failures)} failures")


def test_6_channel_integrity(report):
    p = ToyRsaProvider()
    rnd = random.Random(6)
    secrets = derive_secrets(p, rnd.randbytes(16), rnd.randbytes(16), rnd.randbytes(16), AuthMode.MUTUAL_CERT, "x")
    tx = ChannelState(secrets, Role.INITIATOR, p, random.Random(1))
    rx = ChannelState(secrets, Role.RESPONDER, p, random.Random(2))
    accepted = identity_fail = replay_fail = 0
    corruptions = 0
    for i in range(10_000):
        wire = bytearray(seal(tx, rnd.randbytes(rnd.randint(0, 300))).encode())
        flips = 1 if i % 2 else rnd.randint(2, 8)
        for pos in rnd.sample(range(len(wire)), flips):
            wire[pos] ^= rnd.randint(1, 255)
        corruptions += 1
        try:
            open_record(rx, bytes(wire))
            accepted += 1
        except IntegrityFailure:
            pass
    for _ in range(500):
        m = rnd.randbytes(rnd.randint(0, 2048))
        rec = seal(tx, m)
        identity_fail += open_record(rx, rec) != m
        try:
            open_record(rx, rec)
            replay_fail += 1
        except ReplayDetected:
            pass
    report(6, "channel integrity", accepted == identity_fail == replay_fail == 0,
           f"{corruptions} corruptions, {accepted} accepted; 500 round trips, {identity_fail} mismatches, "
           f"{replay_fail} replays accepted")


def test_7_determinism(report, tmp_path, capsys):
    mismatches, count = [], 0
    for name in bundled_scenarios():
        blobs = []
        for i in range(2):
            path = tmp_path / f"{name}.{i}.trace"
            main(["scenario", name, "--trace-out", str(path)])
            blobs.append(path.read_bytes())
        count += 1
        if blobs[0] != blobs[1] or not blobs[0]:
            mismatches.append(name)
    capsys.readouterr()
    for script in attack_scripts():
        count += 1
        if run(attack(script, seed=3)).trace_bytes() != run(attack(script, seed=3)).trace_bytes():
            mismatches.append(script)
    lossy = [happy_path(m, seed=9, p_loss=0.3, p_dup=0.1, reorder=4) for m in AuthMode]
    for sc in lossy:
        count += 1
        if run(sc).trace_bytes() != run(sc).trace_bytes():
            mismatches.append(sc.name)
    report(7, "determinism", not mismatches, f"{count} scenarios run twice, {len(mismatches)} differ {mismatches}")


@pytest.mark.udp
@requires_udp
def test_8_end_to_end_udp(report, tmp_path):
    start = time.monotonic()
    port = free_port()
    a_addr, b_addr = "02:00:00:00:00:0a", "02:00:00:00:00:0b"
    for name, addr in (("ca", None), ("alice", a_addr), ("bob", b_addr)):
        extra = ["--ca-key", tmp_path / "ca.key", "--addr", addr] if addr else []
        subprocess.run(cli_cmd("keygen", "--out", tmp_path / name, *extra), check=True, capture_output=True)
    for name, addr in (("alice", a_addr), ("bob", b_addr)):
        (tmp_path / f"{name}.toml").write_text(
            f'[node]\nname = "{name}"\naddress = "{addr}"\nkeypair = "{name}.key"\n'
            f'certificate = "{name}.cert"\nca = "ca.pub"\n[transport]\nkind = "udp"\nport = {port}\n')
    payload = random.Random(8).randbytes(1 << 20)
    (tmp_path / "file.bin").write_bytes(payload)
    bob = subprocess.Popen(cli_cmd("run", "--config", tmp_path / "bob.toml", "--receive-dir", tmp_path / "inbox",
                                   "--duration-ms", 28000), stdout=subprocess.PIPE, text=True)
    try:
        alice = subprocess.run(cli_cmd("send", "bob", tmp_path / "file.bin", "--config", tmp_path / "alice.toml"),
                               capture_output=True, text=True, timeout=28)
    finally:
        bob.terminate()
        bob_out, _ = bob.communicate(timeout=10)
    elapsed = time.monotonic() - start
    lines = alice.stdout.splitlines()
    stored = tmp_path / "inbox" / "file.bin"
    ok = (alice.returncode == 0 and "match yes" in lines and any("mode=MUTUAL_CERT" in x for x in lines)
          and stored.exists() and stored.read_bytes() == payload
          and any(x.startswith("received file=file.bin") and "match=yes" in x for x in bob_out.splitlines())
          and elapsed < 30)
    report(8, "end-to-end UDP demo", ok,
           f"exit {alice.returncode}, {elapsed:.1f}s wall clock, "
           f"{[x for x in lines if x.startswith(('connected', 'match'))]} {alice.stderr.strip()[:200]}")


def test_9_mode_taxonomy(report):
    wrong = []
    for lc, lp, pc, pp in itertools.product([False, True], repeat=4):
        psk = b"k" * 32
        local = make_identity("alice", A, cert=lc, psk=psk if lp else None).credentials
        peer = make_identity("bob", B, cert=pc, psk=psk if pp else None).credentials
        want = (AuthMode.MUTUAL_CERT if lc and pc else AuthMode.ONE_WAY_CERT if lc or pc
                else AuthMode.PRESHARED_KEY if lp and pp else AuthMode.NO_AUTH)
        got = select_mode(local, peer.advertised_modes())
        if got is not want:
            wrong.append((lc, lp, pc, pp, got.name))
    happy = defaultdict(bool)
    for mode in AuthMode:
        r = run(happy_path(mode, seed=1))
        happy[mode.name] = audit.established_pair(r, "alice", "bob") and all(ok for _, ok, _ in audit.evaluate(r)) \
            and all(c.mode is mode for c in r.connections("alice"))
    report(9, "mode taxonomy", not wrong and all(happy.values()),
           f"16 credential combinations, {len(wrong)} wrong {wrong}; happy paths {dict(happy)}")
