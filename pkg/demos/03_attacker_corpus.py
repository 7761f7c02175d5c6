"""
Running the attacker corpus
===========================

Each script places an adversary on the medium between alice and bob. It
sees every frame and may drop, replay, splice or forge. After each run
the trace is audited: do both ends agree, is any session key derivable by
the attacker, and did a responder accept an initiator that never ran the
session?
"""

from sanet.manager import ConnState
from sanet.sim import audit
from sanet.sim.corpus import attack, attack_scripts
from sanet.sim.engine import run

print(f"{'script':24s} {'established':>11s} {'delivered':>9s}  agreement secrecy authentication")
for script in attack_scripts():
    r = run(attack(script, seed=0))
    up = sum(ConnState.ESTABLISHED in c.history for c in r.connections("alice", "bob"))
    verdicts = ["ok" if not check(r) else "VIOLATED"
                for check in (audit.agreement, audit.secrecy, audit.authentication)]
    print(f"{script:24s} {up:>8d}/2 {len(r.delivered):>6d}/{len(r.sent)}  "
          f"{verdicts[0]:9s} {verdicts[1]:7s} {verdicts[2]}")

# %% The secrecy oracle is not vacuous: hand the attacker alice's private key.
leaky = run(attack("noop", seed=0, holds_keys_of=["alice"]))
print("\nwith alice's private key leaked:", audit.secrecy(leaky)[0][:60], "...")
