"""Node configuration files and on-disk credential formats.

Credential files are the canonical encodings used on the wire: ``.key``
holds a private key (which embeds its public half), ``.pub`` a public key,
``.cert`` a certificate. A preshared key file holds raw bytes.

Config files are TOML in the same style as scenario files; relative paths
resolve against the config file's directory::

    [node]
    name = "alice"
    address = "02:00:00:00:00:01"
    keypair = "alice.key"
    certificate = "alice.cert"
    ca = "ca.pub"

    [transport]
    kind = "udp"             # udp | sim
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

from .crypto import Certificate, CryptoProvider, KeyPair, decode_public, get_provider, public_of
from .errors import ConfigInvalid, EncodingError, InvalidAddress, MalformedKey
from .handshake import Credentials, Identity
from .transport import DEFAULT_GROUP, DEFAULT_PORT, LinkModel, NodeAddress

MIN_PSK_LEN = 16


def write_private(path: Path, kp: KeyPair) -> None:
    Path(path).write_bytes(kp.private)


def read_keypair(path: str | Path) -> KeyPair:
    data = _read(path)
    try:
        return KeyPair(public_of(data), data)
    except MalformedKey as exc:
        raise ConfigInvalid(f"{path}: not a private key ({exc})") from exc


def read_public(path: str | Path) -> bytes:
    data = _read(path)
    try:
        decode_public(data)
    except MalformedKey as exc:
        raise ConfigInvalid(f"{path}: not a public key ({exc})") from exc
    return data


def read_certificate(path: str | Path) -> Certificate:
    try:
        return Certificate.decode(_read(path))
    except EncodingError as exc:
        raise ConfigInvalid(f"{path}: not a certificate ({exc})") from exc


def read_psk(path: str | Path) -> bytes:
    data = _read(path)
    if len(data) < MIN_PSK_LEN:
        raise ConfigInvalid(f"{path}: preshared key shorter than {MIN_PSK_LEN} bytes")
    return data


def _read(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read {path}: {exc.strerror or exc}") from exc


@dataclass
class NodeConfig:
    name: str
    address: NodeAddress
    keypair: Optional[KeyPair] = None
    certificate: Optional[Certificate] = None
    ca_public: Optional[bytes] = None
    psk: Optional[bytes] = None
    psk_id: str = "group"
    require_auth: bool = False
    provider_name: str = "default"
    transport: str = "udp"
    group: str = DEFAULT_GROUP
    port: int = DEFAULT_PORT
    beacon_interval: int = 1000
    link: LinkModel = field(default_factory=LinkModel)
    sim_peers: List["NodeConfig"] = field(default_factory=list)
    source: Optional[Path] = None

    @property
    def provider(self) -> CryptoProvider:
        return get_provider(self.provider_name)

    def credentials(self) -> Credentials:
        return Credentials(self.keypair, self.certificate, self.ca_public, self.psk,
                           self.psk_id if self.psk else "")

    def identity(self) -> Identity:
        return Identity(self.address, self.name, self.credentials(), self.provider, self.require_auth)

    def validate(self) -> "NodeConfig":
        if self.address.is_broadcast:
            raise ConfigInvalid("node address cannot be broadcast")
        if self.certificate is not None:
            if self.keypair is None:
                raise ConfigInvalid("a certificate needs the matching keypair")
            if self.certificate.subject_addr != self.address:
                raise ConfigInvalid(f"certificate is for {self.certificate.subject_addr}, "
                                    f"node address is {self.address}")
            if self.certificate.subject_public != self.keypair.public:
                raise ConfigInvalid("certificate does not certify the configured keypair")
            if self.ca_public is not None and not self.provider.verify_certificate(self.ca_public,
                                                                                   self.certificate):
                raise ConfigInvalid("certificate is not signed by the configured CA")
        if self.transport not in ("udp", "sim"):
            raise ConfigInvalid(f"unknown transport {self.transport!r}")
        if self.provider_name not in ("default", "toy"):
            raise ConfigInvalid(f"unknown provider {self.provider_name!r}")
        if self.beacon_interval <= 0:
            raise ConfigInvalid("beacon_interval must be positive")
        return self


def config_from_dict(doc: Dict[str, Any], base: Path = Path("."), depth: int = 0) -> NodeConfig:
    try:
        node = doc["node"]
        tr = doc.get("transport", {})
        path = lambda key: base / node[key] if node.get(key) else None  # noqa: E731
        keypair = read_keypair(path("keypair")) if path("keypair") else None
        cert = read_certificate(path("certificate")) if path("certificate") else None
        ca = read_public(path("ca")) if path("ca") else None
        psk = read_psk(path("psk")) if path("psk") else None
        ld = doc.get("link", {})
        cfg = NodeConfig(
            name=str(node["name"]), address=NodeAddress.parse(node["address"]),
            keypair=keypair, certificate=cert, ca_public=ca, psk=psk,
            psk_id=str(node.get("psk_id", "group")), require_auth=bool(node.get("require_auth", False)),
            provider_name=str(node.get("provider", "default")),
            transport=str(tr.get("kind", "udp")), group=str(tr.get("group", DEFAULT_GROUP)),
            port=int(tr.get("port", DEFAULT_PORT)), beacon_interval=int(node.get("beacon_interval", 1000)),
            link=LinkModel(float(ld.get("p_loss", 0.0)), float(ld.get("p_dup", 0.0)),
                           int(ld.get("reorder_window", 0)), int(ld.get("seed", 0))),
        )
        if depth == 0:
            cfg.sim_peers = [load_config(base / p["config"], depth + 1) for p in doc.get("peer", [])]
    except ConfigInvalid:
        raise
    except InvalidAddress as exc:
        raise ConfigInvalid(f"bad address: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"malformed config: {exc!r}") from exc
    return cfg.validate()


def load_config(path: str | Path, depth: int = 0) -> NodeConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(_read(path).decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    cfg = config_from_dict(doc, path.parent, depth)
    cfg.source = path
    return cfg
