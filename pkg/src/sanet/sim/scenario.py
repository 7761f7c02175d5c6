"""Scenario description and its TOML file format.

Example::

    [scenario]
    name = "happy-path"
    seed = 7
    duration = 6000          # virtual milliseconds

    [link]
    p_loss = 0.1

    [[node]]
    name = "alice"
    address = "02:00:00:00:00:01"
    cert = "trusted"         # trusted | rogue | none

    [[node]]
    name = "bob"
    address = "02:00:00:00:00:02"

    [attacker]
    script = "replay"

    [[command]]
    at = 1500
    op = "connect"           # connect | send | close
    node = "alice"
    peer = "bob"

    [expect]
    established = [["alice", "bob"]]
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import InvalidAddress, ScenarioInvalid
from ..handshake import AuthMode
from ..reliable import ArqPolicy
from ..transport import LinkModel, NodeAddress
from .attacker import SCRIPTS

CERT_KINDS = ("trusted", "rogue", "none")
OPS = ("connect", "send", "close")
EXPECT_KEYS = ("established", "not_established", "agreement", "secrecy", "authentication", "delivery")


@dataclass
class NodeSpec:
    name: str
    address: NodeAddress
    cert: str = "trusted"
    psk: bool = False
    trust_ca: bool = True
    require_auth: bool = False


@dataclass
class Command:
    at: int
    op: str
    node: str
    peer: str
    size: int = 256
    count: int = 1
    mode: Optional[AuthMode] = None


@dataclass
class AttackerSpec:
    script: str
    address: NodeAddress = field(default_factory=lambda: NodeAddress.parse("02:00:00:00:00:66"))
    holds_keys_of: List[str] = field(default_factory=list)


@dataclass
class Scenario:
    nodes: List[NodeSpec]
    name: str = "scenario"
    seed: int = 0
    key_seed: int = 0
    duration: int = 10000
    latency: int = 1
    provider: str = "toy"
    link: LinkModel = field(default_factory=LinkModel)
    arq: ArqPolicy = field(default_factory=ArqPolicy)
    attacker: Optional[AttackerSpec] = None
    commands: List[Command] = field(default_factory=list)
    expect: Dict[str, Any] = field(default_factory=dict)
    trace_payloads: bool = True

    def validate(self) -> "Scenario":
        names = [n.name for n in self.nodes]
        addrs = [n.address for n in self.nodes]
        if not self.nodes:
            raise ScenarioInvalid("scenario has no nodes")
        if len(set(names)) != len(names):
            raise ScenarioInvalid("node names must be unique")
        if len(set(addrs)) != len(addrs):
            raise ScenarioInvalid("node addresses must be unique")
        if any(a.is_broadcast for a in addrs):
            raise ScenarioInvalid("broadcast address cannot be a node")
        if self.attacker is not None:
            if self.attacker.script not in SCRIPTS:
                raise ScenarioInvalid(f"unknown attacker script {self.attacker.script!r}")
            if self.attacker.address in addrs:
                raise ScenarioInvalid("attacker address collides with a node")
            for n in self.attacker.holds_keys_of:
                if n not in names:
                    raise ScenarioInvalid(f"attacker holds keys of unknown node {n!r}")
        for n in self.nodes:
            if n.cert not in CERT_KINDS:
                raise ScenarioInvalid(f"node {n.name}: cert must be one of {CERT_KINDS}")
        for c in self.commands:
            if c.op not in OPS:
                raise ScenarioInvalid(f"unknown command op {c.op!r}")
            if c.node not in names or c.peer not in names:
                raise ScenarioInvalid(f"command references unknown node: {c.node} -> {c.peer}")
            if not 0 <= c.at <= self.duration:
                raise ScenarioInvalid(f"command at {c.at} outside duration {self.duration}")
        for k in self.expect:
            if k not in EXPECT_KEYS:
                raise ScenarioInvalid(f"unknown expectation {k!r}")
        if self.latency < 1 or self.duration <= 0:
            raise ScenarioInvalid("latency and duration must be positive")
        if self.provider not in ("toy", "default"):
            raise ScenarioInvalid(f"unknown provider {self.provider!r}")
        return self


def _addr(text: str) -> NodeAddress:
    try:
        return NodeAddress.parse(text)
    except InvalidAddress as exc:
        raise ScenarioInvalid(str(exc)) from exc


def _mode(text: Optional[str]) -> Optional[AuthMode]:
    if text is None:
        return None
    try:
        return AuthMode[text.upper()]
    except KeyError:
        raise ScenarioInvalid(f"unknown mode {text!r}") from None


def scenario_from_dict(doc: Dict[str, Any]) -> Scenario:
    try:
        head = doc.get("scenario", {})
        nodes = [NodeSpec(n["name"], _addr(n["address"]), n.get("cert", "trusted"), bool(n.get("psk", False)),
                          bool(n.get("trust_ca", True)), bool(n.get("require_auth", False)))
                 for n in doc.get("node", [])]
        link_doc = dict(doc.get("link", {}))
        link_doc.setdefault("seed", int(head.get("seed", 0)))
        link = LinkModel(float(link_doc.get("p_loss", 0.0)), float(link_doc.get("p_dup", 0.0)),
                         int(link_doc.get("reorder_window", 0)), int(link_doc["seed"]))
        arq = ArqPolicy(**doc.get("arq", {}))
        attacker = None
        if "attacker" in doc:
            a = doc["attacker"]
            attacker = AttackerSpec(a["script"], _addr(a.get("address", "02:00:00:00:00:66")),
                                    list(a.get("holds_keys_of", [])))
        commands = [Command(int(c["at"]), c["op"], c["node"], c["peer"], int(c.get("size", 256)),
                            int(c.get("count", 1)), _mode(c.get("mode")))
                    for c in doc.get("command", [])]
        sc = Scenario(nodes, head.get("name", "scenario"), int(head.get("seed", 0)), int(head.get("key_seed", 0)),
                      int(head.get("duration", 10000)), int(head.get("latency", 1)),
                      head.get("provider", "toy"), link, arq, attacker, commands, dict(doc.get("expect", {})),
                      bool(head.get("trace_payloads", True)))
    except ScenarioInvalid:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioInvalid(f"malformed scenario: {exc!r}") from exc
    return sc.validate()


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ScenarioInvalid(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(doc)


def loads_scenario(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioInvalid(str(exc)) from exc
    return scenario_from_dict(doc)
