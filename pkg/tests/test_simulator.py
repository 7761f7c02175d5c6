import sys

import pytest

from oracles import kdf
from sanet.errors import ScenarioInvalid
from sanet.handshake import AuthMode, Role
from sanet.manager import ConnState
from sanet.sim import audit
from sanet.sim.corpus import attack, attack_scripts, happy_path
from sanet.sim.engine import run
from sanet.sim.scenario import loads_scenario, scenario_from_dict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BASE = """
[scenario]
name = "t"
seed = 4
duration = 6000

[link]
p_loss = 0.1
p_dup = 0.05
reorder_window = 2

[[node]]
name = "alice"
address = "02:00:00:00:00:01"

[[node]]
name = "bob"
address = "02:00:00:00:00:02"

[[command]]
at = 1500
op = "connect"
node = "alice"
peer = "bob"

[[command]]
at = 4000
op = "send"
node = "alice"
peer = "bob"
size = 700
count = 3

[expect]
established = [["alice", "bob"]]
delivery = true
"""


def rows_ok(result):
    return {name: ok for name, ok, _ in audit.evaluate(result)}


class TestScenarioFile:
    def test_parse(self):
        sc = loads_scenario(BASE)
        assert [n.name for n in sc.nodes] == ["alice", "bob"]
        assert (sc.link.p_loss, sc.link.p_dup, sc.link.reorder_window, sc.link.seed) == (0.1, 0.05, 2, 4)
        assert [c.op for c in sc.commands] == ["connect", "send"] and sc.commands[1].count == 3
        r = run(sc)
        assert all(rows_ok(r).values())
        assert len(r.delivered) == 3

    @pytest.mark.parametrize("edit", [
        lambda d: d["node"].append(dict(d["node"][0])),
        lambda d: d["node"].append({"name": "carol", "address": d["node"][0]["address"]}),
        lambda d: d["node"][0].update(address="ff:ff:ff:ff:ff:ff"),
        lambda d: d["node"][0].update(address="not-an-address"),
        lambda d: d["node"][0].update(cert="maybe"),
        lambda d: d["command"][0].update(at=99999),
        lambda d: d["command"][0].update(op="explode"),
        lambda d: d["command"][0].update(peer="nobody"),
        lambda d: d["command"][0].update(mode="ultra"),
        lambda d: d.update(attacker={"script": "no-such-script"}),
        lambda d: d.update(attacker={"script": "replay", "address": "02:00:00:00:00:01"}),
        lambda d: d.update(attacker={"script": "replay", "holds_keys_of": ["zed"]}),
        lambda d: d["expect"].update(vibes=True),
        lambda d: d["scenario"].update(provider="rot13"),
        lambda d: d["scenario"].update(duration=0),
        lambda d: d.update(node=[]),
        lambda d: d["node"][0].pop("address"),
    ])
    def test_invalid(self, edit):
        doc = tomllib.loads(BASE)
        edit(doc)
        with pytest.raises(ScenarioInvalid):
            scenario_from_dict(doc)

    def test_bad_toml(self):
        with pytest.raises(ScenarioInvalid):
            loads_scenario("[scenario\nname=")


class TestDeterminism:
    def test_identical_traces(self):
        a = run(happy_path(AuthMode.MUTUAL_CERT, seed=21, p_loss=0.2, p_dup=0.1, reorder=3))
        b = run(happy_path(AuthMode.MUTUAL_CERT, seed=21, p_loss=0.2, p_dup=0.1, reorder=3))
        assert a.trace_bytes() == b.trace_bytes() and len(a.trace) > 50

    def test_seed_changes_trace(self):
        a = run(happy_path(seed=1, p_loss=0.2))
        b = run(happy_path(seed=2, p_loss=0.2))
        assert a.trace_bytes() != b.trace_bytes()

    def test_trace_ordering(self):
        r = run(happy_path(seed=5, p_loss=0.1))
        keys = [(e.t, e.seq) for e in r.trace]
        assert keys == sorted(keys) and len({s for _, s in keys}) == len(keys)
        kinds = {e.kind for e in r.trace}
        assert {"frame-sent", "frame-delivered", "frame-dropped", "state-transition", "app-deliver"} <= kinds


@pytest.mark.parametrize("mode", list(AuthMode))
def test_happy_path_secrets_match_kdf(mode):
    r = run(happy_path(mode, seed=8, p_loss=0.1))
    assert audit.established_pair(r, "alice", "bob")
    assert all(rows_ok(r).values())
    if mode is AuthMode.NO_AUTH:
        assert not r.sessions
        return
    by_role = {ev.role: ev.secrets for _, ev in r.sessions}
    (h,) = [h for h in r.handshakes("alice") if h.secrets is not None]
    for role in (Role.INITIATOR, Role.RESPONDER):
        s = by_role[role]
        assert s.enc_i == kdf(h.session_key, s.n1, s.n2, "ENC-I")
        assert s.mac_r == kdf(h.session_key, s.n1, s.n2, "MAC-R")


@pytest.mark.parametrize("script", attack_scripts())
@pytest.mark.parametrize("seed", [0, 1])
def test_attack_corpus_audits(script, seed):
    r = run(attack(script, seed=seed))
    for check in (audit.agreement, audit.secrecy, audit.authentication):
        assert check(r) == [], (script, check.__name__)
    # every payload that arrived came from an honest seal
    sent = {rec.payload for rec in r.sent}
    assert all(p in sent for _, _, _, _, p in r.delivered)


def test_corpus_size():
    assert len(attack_scripts()) >= 8
    for required in ("replay", "reflect", "splice", "drop-m3", "forge-cert", "inject-noise",
                     "duplicate-m1", "full-transcript-replay"):
        assert required in attack_scripts()


def test_replay_no_mismatched_establishment():
    r = run(attack("replay"))
    b_conns = {c.conn_id: c for c in r.connections("bob", "alice")}
    for conn in r.connections("alice", "bob"):
        if ConnState.ESTABLISHED in conn.history:
            peer = b_conns[conn.conn_id]
            assert (peer.handshake.n1, peer.handshake.n2) == (conn.handshake.n1, conn.handshake.n2)
        else:
            assert conn.state is ConnState.FAILED


def test_forged_cert_rejected():
    r = run(attack("forge-cert"))
    assert not audit.established_pair(r, "alice", "bob")
    assert all(ConnState.ESTABLISHED not in c.history for n in ("alice", "bob") for c in r.connections(n))


def test_drop_m3():
    r = run(attack("drop-m3"))
    for c in r.connections("bob", "alice"):
        assert ConnState.ESTABLISHED not in c.history
    for c in r.connections("alice", "bob"):
        assert c.state is ConnState.FAILED and c.failure == "Timeout"


def test_audit_detects_compromise():
    r = run(attack("noop", holds_keys_of=["alice"]))
    assert audit.established_pair(r, "alice", "bob")
    assert audit.secrecy(r)


def test_audit_detects_wrong_expectation():
    sc = happy_path(seed=2)
    sc.expect["not_established"] = [["alice", "bob"]]
    assert not all(rows_ok(run(sc)).values())


@pytest.mark.slow
def test_soak_200_messages_lossy():
    sc = happy_path(AuthMode.MUTUAL_CERT, seed=13, p_loss=0.3, sends=200, size=10 * 1024)
    sc.duration = 400_000
    r = run(sc)
    assert audit.established_pair(r, "alice", "bob")
    assert audit.delivery(r) == [] and len(r.delivered) == 200
