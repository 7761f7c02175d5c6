"""Ready-made scenarios: honest runs in every mode and the attacker corpus."""

from __future__ import annotations

from typing import List, Optional

from ..handshake import AuthMode
from ..transport import LinkModel, NodeAddress
from .attacker import SCRIPTS
from .scenario import AttackerSpec, Command, NodeSpec, Scenario

ALICE = NodeAddress.parse("02:00:00:00:00:01")
BOB = NodeAddress.parse("02:00:00:00:00:02")

# Which credentials each mode needs; alice initiates, bob responds.
_MODE_NODES = {
    AuthMode.NO_AUTH: (dict(cert="none"), dict(cert="none")),
    AuthMode.MUTUAL_CERT: (dict(), dict()),
    AuthMode.ONE_WAY_CERT: (dict(), dict(cert="none")),
    AuthMode.PRESHARED_KEY: (dict(cert="none", psk=True), dict(cert="none", psk=True)),
}


def pair(mode: AuthMode = AuthMode.MUTUAL_CERT) -> List[NodeSpec]:
    a, b = _MODE_NODES[mode]
    return [NodeSpec("alice", ALICE, **a), NodeSpec("bob", BOB, **b)]


def happy_path(mode: AuthMode = AuthMode.MUTUAL_CERT, seed: int = 0, p_loss: float = 0.0,
               p_dup: float = 0.0, reorder: int = 0, sends: int = 2, size: int = 512,
               key_seed: int = 0, provider: str = "toy") -> Scenario:
    """alice connects to bob at t=1500 and sends ``sends`` messages once up."""
    cmds = [Command(1500, "connect", "alice", "bob", mode=mode)]
    if sends:
        cmds.append(Command(4000, "send", "alice", "bob", size=size, count=sends))
    return Scenario(pair(mode), name=f"happy-{mode.name.lower()}", seed=seed, key_seed=key_seed,
                    duration=12000, provider=provider, link=LinkModel(p_loss, p_dup, reorder, seed),
                    commands=cmds,
                    expect={"established": [["alice", "bob"]], "delivery": bool(sends)})


def attack(script: str, seed: int = 0, mode: AuthMode = AuthMode.MUTUAL_CERT,
           holds_keys_of: Optional[List[str]] = None, key_seed: int = 0) -> Scenario:
    """Two sessions alice->bob with traffic, under the named attacker script."""
    cmds = [
        Command(1500, "connect", "alice", "bob", mode=mode),
        Command(2500, "send", "alice", "bob", size=300, count=2),
        Command(4000, "connect", "alice", "bob", mode=mode),
        Command(5500, "send", "alice", "bob", size=300, count=1),
    ]
    return Scenario(pair(mode), name=f"attack-{script}", seed=seed, key_seed=key_seed, duration=9000,
                    link=LinkModel(seed=seed), commands=cmds,
                    attacker=AttackerSpec(script, holds_keys_of=list(holds_keys_of or [])))


def attack_scripts() -> List[str]:
    return sorted(s for s in SCRIPTS if s != "noop")
