import random

from hypothesis import given, settings, strategies as st

from sanet.handshake import AuthMode
from sanet.sim.corpus import happy_path
from sanet.sim.engine import run
from sanet.sim.knowledge import Atom, Kdf, Lifter, PkEnc, PrivKey, SymEnc, Tup, knowledge_closure
from sanet.transport import Frame, NodeAddress

_RESULTS = {}


def honest(mode=AuthMode.MUTUAL_CERT):
    if mode not in _RESULTS:
        _RESULTS[mode] = run(happy_path(mode, seed=3, sends=2, size=200))
    return _RESULTS[mode]


def transcript(result):
    return Lifter(result.world.provider).frames(result.frames)


def pub(result, name):
    return result.nodes[name].identity.credentials.keypair.public


def test_mutual_cert_key_not_derivable():
    r = honest()
    (k,) = r.session_keys()
    kn = knowledge_closure(transcript(r))
    assert k not in kn
    (h,) = r.handshakes("alice")
    assert h.n1 in kn and h.n2 in kn
    cert_a = r.nodes["alice"].identity.credentials.certificate
    assert cert_a.ca_signature in kn and cert_a.subject_public in kn
    assert not any(p in kn for _, _, _, _, p in r.delivered)


def test_initiator_private_key_reveals_everything():
    r = honest()
    (k,) = r.session_keys()
    kn = knowledge_closure(transcript(r), [PrivKey(pub(r, "alice"))])
    assert k in kn
    assert r.delivered and all(p in kn for _, _, _, _, p in r.delivered)


def test_responder_private_key_is_not_enough():
    # K travels only under Pk(A), so Pvk(B) does not open it
    r = honest()
    (k,) = r.session_keys()
    assert k not in knowledge_closure(transcript(r), [PrivKey(pub(r, "bob"))])


def test_no_auth_plaintext_visible():
    r = honest(AuthMode.NO_AUTH)
    kn = knowledge_closure(transcript(r))
    assert r.delivered and all(p in kn for _, _, _, _, p in r.delivered)


def test_empty_transcript():
    initial = [PrivKey(b"pub-1"), Atom(b"x")]
    kn = knowledge_closure([], initial)
    assert kn.terms == frozenset(initial) | {Atom(b"pub-1")}
    assert len(knowledge_closure([])) == 0


def test_rules_by_hand():
    k = Atom(b"K" * 16)
    enc = PkEnc(b"pa", k)
    data = SymEnc(Kdf(k, Atom(b"n1"), Atom(b"n2"), "ENC-I"), Atom(b"secret"))
    t = [Tup((Atom(b"n1"), Atom(b"n2"))), Tup((enc, data))]
    closed = knowledge_closure(t)
    assert Atom(b"n1") in closed.terms and enc in closed.terms
    assert k not in closed and b"secret" not in closed
    # construction: known parts assemble into tuples and encryptions
    assert closed.derivable(Tup((Atom(b"n2"), Atom(b"n1"))))
    assert not closed.derivable(PkEnc(b"pa", Atom(b"n1")))  # Pk(A) itself was never seen
    opened = knowledge_closure(t, [PrivKey(b"pa")])
    assert k in opened and b"secret" in opened
    assert opened.derivable(PkEnc(b"pa", Atom(b"n1")))


def test_key_decryption_chains():
    # the key for the second layer is only available after opening the first
    inner = SymEnc(Atom(b"k2"), Atom(b"deep"))
    outer = SymEnc(Atom(b"k1"), Atom(b"k2"))
    t = [inner, outer]
    assert b"deep" not in knowledge_closure(t)
    assert b"deep" in knowledge_closure(t, [Atom(b"k1")])


_INITIAL_POOL = None


def _pool():
    global _INITIAL_POOL
    if _INITIAL_POOL is None:
        r = honest()
        _INITIAL_POOL = (transcript(r), [PrivKey(pub(r, "alice")), PrivKey(pub(r, "bob")),
                                         Atom(r.session_keys()[0]), Atom(b"junk")])
    return _INITIAL_POOL


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=4, max_size=4), st.lists(st.booleans(), min_size=4, max_size=4))
def test_monotone(a, b):
    terms, pool = _pool()
    small = [p for p, keep in zip(pool, a) if keep]
    large = [p for p, keep in zip(pool, zip(a, b)) if keep[0] or keep[1]]
    assert knowledge_closure(terms, small) <= knowledge_closure(terms, large)


@settings(max_examples=20, deadline=None)
@given(st.randoms(use_true_random=False))
def test_order_independent(rnd):
    terms, pool = _pool()
    shuffled = list(terms)
    rnd.shuffle(shuffled)
    assert knowledge_closure(shuffled, pool[:1]).terms == knowledge_closure(terms, pool[:1]).terms


def test_unparseable_frames_are_opaque():
    lifter = Lifter()
    f = Frame(NodeAddress.parse("ff:ff:ff:ff:ff:ff"), NodeAddress.parse("02:00:00:00:00:09"),
              random.Random(1).randbytes(40))
    terms = lifter.frames([f])
    assert terms == [Atom(f.payload)] and lifter.ambiguities
