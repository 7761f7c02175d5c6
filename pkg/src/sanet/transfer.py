"""File transfer over established secure connections.

Application messages, each one secure-channel payload:

``F`` + fields(name, size)   start of file
``P`` + bytes                 chunk
``E`` + sha256                end, with the sender's digest
``D`` + sha256                receiver's reply: digest of what it got
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

from .encoding import decode_fields, encode_fields, encode_uint
from .errors import EncodingError
from .manager import AppDeliver, Node
from .transport import NodeAddress

log = logging.getLogger(__name__)

CHUNK = 32 * 1024
DIGEST = 32


@dataclass
class Incoming:
    name: str
    size: int
    hasher: "hashlib._Hash" = field(default_factory=hashlib.sha256)
    received: int = 0
    parts: list = field(default_factory=list)


@dataclass
class Received:
    node: str
    peer: NodeAddress
    name: str
    size: int
    digest: str
    sender_digest: str

    @property
    def ok(self) -> bool:
        return self.digest == self.sender_digest

    def line(self) -> str:
        return (f"received file={self.name} bytes={self.size} sha256={self.digest} "
                f"from={self.peer} match={'yes' if self.ok else 'no'}")


def send_file(node: Node, conn_id: int, peer: NodeAddress, name: str, data: bytes, now: int) -> str:
    """Queue a whole file on the connection; returns its hex digest."""
    digest = hashlib.sha256(data).digest()
    node.send_secure(conn_id, b"F" + encode_fields([name.encode("utf-8"), encode_uint(len(data), 8)]),
                     now, peer)
    for off in range(0, len(data), CHUNK):
        node.send_secure(conn_id, b"P" + data[off:off + CHUNK], now, peer)
    node.send_secure(conn_id, b"E" + digest, now, peer)
    return digest.hex()


def safe_name(name: str) -> str:
    """Reduce a peer-supplied file name to a plain name inside the receive directory."""
    base = Path(name.replace("\\", "/")).name
    return "unnamed" if base in ("", ".", "..") or "\0" in base else base


class FileService:
    """Host handler that receives files and records peers' digest replies."""

    def __init__(self, host, out_dir: Optional[Path] = None,
                 on_received: Callable[[Received], None] | None = None):
        self.host = host
        self.out_dir = Path(out_dir) if out_dir else None
        self.on_received = on_received or (lambda r: None)
        self.incoming: Dict[Tuple[str, NodeAddress, int], Incoming] = {}
        self.replies: Dict[Tuple[str, NodeAddress, int], str] = {}
        self.received: list = []
        host.handlers.append(self.handle)

    def handle(self, node_name: str, ev) -> None:
        if not isinstance(ev, AppDeliver) or not ev.data:
            return
        key = (node_name, ev.peer, ev.conn_id)
        kind, body = ev.data[:1], ev.data[1:]
        if kind == b"F":
            try:
                name, size = decode_fields(body, 2)
                self.incoming[key] = Incoming(safe_name(name.decode("utf-8")), int.from_bytes(size, "big"))
            except (EncodingError, UnicodeDecodeError):
                return
        elif kind == b"P" and key in self.incoming:
            inc = self.incoming[key]
            inc.hasher.update(body)
            inc.received += len(body)
            if self.out_dir is not None:
                inc.parts.append(body)
        elif kind == b"E" and key in self.incoming and len(body) == DIGEST:
            inc = self.incoming.pop(key)
            digest = inc.hasher.digest()
            node = self.host.nodes[node_name]
            node.send_secure(ev.conn_id, b"D" + digest, self.host.now(), ev.peer)
            if self.out_dir is not None:
                try:
                    self.out_dir.mkdir(parents=True, exist_ok=True)
                    (self.out_dir / inc.name).write_bytes(b"".join(inc.parts))
                except OSError as exc:
                    log.warning("cannot store %s: %s", inc.name, exc)
            rec = Received(node_name, ev.peer, inc.name, inc.received, digest.hex(), body.hex())
            if inc.received != inc.size:
                rec.sender_digest = ""
            self.received.append(rec)
            self.on_received(rec)
        elif kind == b"D" and len(body) == DIGEST:
            self.replies[key] = body.hex()
