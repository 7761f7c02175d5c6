"""Command-line front end: ``sanet <subcommand> [options]``.

stdout carries one machine-parseable record per line; diagnostics go to
stderr. Exit codes:

    0  success
    1  check failed (scenario assertion, digest mismatch, invalid certificate)
    2  unknown device
    3  handshake failed
    4  timeout
    5  invalid input (bad arguments, config, scenario or credential files)
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import random
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence

from .config import NodeConfig, load_config, read_certificate, read_keypair, read_public
from .crypto import get_provider
from .errors import ConfigInvalid, InvalidAddress, SanetError, ScenarioInvalid, UnknownDevice
from .host import Host, SimHost, UdpHost
from .manager import ConnState, DeviceEvent, DeviceState, NodeSettings, SessionEstablished
from .sim.audit import evaluate
from .sim.engine import describe_event, run
from .sim.scenario import loads_scenario
from .transfer import FileService, send_file
from .transport import NodeAddress

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_UNKNOWN_DEVICE = 2
EXIT_HANDSHAKE_FAILED = 3
EXIT_TIMEOUT = 4
EXIT_INVALID = 5

log = logging.getLogger("sanet")


class UsageError(SanetError):
    pass


def _out(line: str) -> None:
    print(line, flush=True)


def _rng(seed: Optional[int], label: str) -> random.Random:
    return random.SystemRandom() if seed is None else random.Random(f"{label}:{seed}")


# -- keys and certificates --------------------------------------------------------

def cmd_keygen(args) -> int:
    provider = get_provider(args.provider)
    kp = provider.generate_keypair(_rng(args.seed, "keygen"))
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    key_path, pub_path = prefix.with_suffix(".key"), prefix.with_suffix(".pub")
    key_path.write_bytes(kp.private)
    pub_path.write_bytes(kp.public)
    _out(f"key {key_path}")
    _out(f"pub {pub_path}")
    if args.ca_key:
        if not args.addr:
            raise UsageError("--addr is required when issuing a certificate")
        cert_path = prefix.with_suffix(".cert")
        _issue(provider, Path(args.ca_key), kp.public, args.addr, args.name or prefix.name, args.serial, cert_path)
        _out(f"cert {cert_path}")
    return EXIT_OK


def _issue(provider, ca_key_path: Path, subject_public: bytes, addr: str, name: str, serial: int,
           out: Path) -> None:
    ca = read_keypair(ca_key_path)
    cert = provider.issue_certificate(ca.private, NodeAddress.parse(addr), name, subject_public, serial)
    out.write_bytes(cert.encode())


def _subject_public(path: Path) -> bytes:
    try:
        return read_keypair(path).public
    except ConfigInvalid:
        return read_public(path)


def cmd_cert(args) -> int:
    provider = get_provider(args.provider)
    if args.action == "issue":
        out = Path(args.out)
        _issue(provider, Path(args.ca_key), _subject_public(Path(args.key)), args.addr,
               args.name or Path(args.key).stem, args.serial, out)
        _out(f"cert {out}")
        return EXIT_OK
    cert = read_certificate(args.cert)
    ok = provider.verify_certificate(read_public(args.ca), cert)
    _out(f"{'valid' if ok else 'invalid'} addr={cert.subject_addr} name={cert.subject_name} serial={cert.serial}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# -- running nodes ------------------------------------------------------------------------

def _load(args) -> NodeConfig:
    if not args.config:
        raise UsageError("--config is required")
    cfg = load_config(args.config)
    if args.transport:
        cfg.transport = args.transport
    return cfg


def _settings(cfg: NodeConfig) -> NodeSettings:
    return NodeSettings(beacon_interval=cfg.beacon_interval)


def _build_host(cfg: NodeConfig, seed: Optional[int]) -> Host:
    if cfg.transport == "sim":
        sim_seed = 0 if seed is None else seed
        host: Host = SimHost(replace(cfg.link, seed=cfg.link.seed + sim_seed))
        host.add_node(cfg.name, cfg.identity(), _rng(sim_seed, f"node:{cfg.name}"), _settings(cfg))
        for peer in cfg.sim_peers:
            host.add_node(peer.name, peer.identity(), _rng(sim_seed, f"node:{peer.name}"), _settings(peer))
    else:
        if cfg.sim_peers:
            log.warning("[[peer]] entries are only used with the sim transport")
        host = UdpHost(cfg.group, cfg.port)
        host.add_node(cfg.name, cfg.identity(), _rng(seed, f"node:{cfg.name}"), _settings(cfg))
    return host


class TraceWriter:
    """Host handler writing node events as ``time seq kind node detail`` lines."""

    def __init__(self, host: Host, path: Optional[str]):
        self.host = host
        self.fh = open(path, "w", encoding="utf-8") if path else None
        self.seq = 0
        host.handlers.append(self.handle)

    def handle(self, node: str, ev) -> None:
        kind, detail = describe_event(ev, str)
        log.debug("%s %s %s", node, kind, detail)
        if self.fh is not None:
            self.seq += 1
            self.fh.write(f"{self.host.now():09d} {self.seq:07d} {kind} {node} {detail}\n")

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


def _format_device(dev, now: int) -> str:
    modes = ",".join(sorted(m.name for m in dev.advertised_modes))
    return f"{dev.addr} {dev.name} {dev.state.value} {modes} {max(0, now - dev.last_seen)}"


def _resolve_peer(node, text: str):
    """Match a discovered device by address or by advertised name."""
    try:
        addr = NodeAddress.parse(text)
        dev = node.devices.get(addr)
        return dev if dev is not None and dev.state is DeviceState.DISCOVERED else None
    except InvalidAddress:
        for dev in node.devices.values():
            if dev.name == text and dev.state is DeviceState.DISCOVERED:
                return dev
    return None


def cmd_run(args) -> int:
    cfg = _load(args)
    host = _build_host(cfg, args.seed)
    trace = TraceWriter(host, args.trace_out)
    FileService(host, args.receive_dir, on_received=lambda r: _out(r.line()))

    def announce(node, ev):
        if node != cfg.name:
            return
        if isinstance(ev, DeviceEvent):
            _out(f"device {ev.kind} {ev.addr} {ev.name}")
        elif isinstance(ev, SessionEstablished):
            _out(f"session conn={ev.conn_id:08x} peer={ev.peer} role={ev.role.value} "
                 f"mode={ev.secrets.mode.name} identity={ev.secrets.peer_identity}")
    host.handlers.append(announce)
    duration = args.duration_ms
    if duration is None and cfg.transport == "sim":
        duration = 10000
    host.start()
    _out(f"node {cfg.name} {cfg.address} transport={cfg.transport}")
    try:
        host.run_until(lambda: False, duration)
    except KeyboardInterrupt:
        pass
    finally:
        host.close()
        trace.close()
    return EXIT_OK


def cmd_peers(args) -> int:
    cfg = _load(args)
    host = _build_host(cfg, args.seed)
    trace = TraceWriter(host, args.trace_out)
    host.start()
    try:
        host.run_until(lambda: False, args.listen_ms)
        node = host.nodes[cfg.name]
        for dev in node.peers_table():
            _out(_format_device(dev, host.now()))
    finally:
        host.close()
        trace.close()
    return EXIT_OK


def cmd_send(args) -> int:
    cfg = _load(args)
    try:
        data = Path(args.file).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {args.file}: {exc.strerror or exc}") from exc
    host = _build_host(cfg, args.seed)
    trace = TraceWriter(host, args.trace_out)
    service = FileService(host)
    node = host.nodes[cfg.name]
    host.start()
    try:
        if not host.run_until(lambda: _resolve_peer(node, args.peer) is not None, args.discover_ms):
            print(f"error: device {args.peer} not discovered", file=sys.stderr)
            return EXIT_UNKNOWN_DEVICE
        dev = _resolve_peer(node, args.peer)
        conn_id = node.connect(dev.addr, host.now())
        conn = node.connections[(dev.addr, conn_id)]
        settled = host.run_until(lambda: conn.state is not ConnState.CONNECTING, args.timeout_ms)
        if not settled or (conn.state is ConnState.FAILED and conn.failure == "Timeout"):
            print(f"error: handshake with {dev.addr} timed out", file=sys.stderr)
            return EXIT_TIMEOUT
        if conn.state is not ConnState.ESTABLISHED:
            print(f"error: handshake with {dev.addr} failed: {conn.failure}", file=sys.stderr)
            return EXIT_HANDSHAKE_FAILED
        _out(f"connected conn={conn_id:08x} peer={dev.addr} name={dev.name} mode={conn.mode.name}")
        name = Path(args.file).name
        digest = send_file(node, conn_id, dev.addr, name, data, host.now())
        _out(f"sent file={name} bytes={len(data)} sha256={digest}")
        key = (cfg.name, dev.addr, conn_id)
        done = host.run_until(lambda: key in service.replies or conn.state is not ConnState.ESTABLISHED,
                              args.timeout_ms)
        if not done or key not in service.replies:
            print(f"error: transfer to {dev.addr} did not complete ({conn.state.value})", file=sys.stderr)
            return EXIT_TIMEOUT
        peer_digest = service.replies[key]
        _out(f"peer-digest sha256={peer_digest}")
        match = peer_digest == digest
        _out(f"match {'yes' if match else 'no'}")
        node.close(conn_id, host.now(), dev.addr)
        host.run_until(lambda: not node.link.in_flight(), 2000)
        return EXIT_OK if match else EXIT_CHECK_FAILED
    finally:
        host.close()
        trace.close()


# -- scenarios -------------------------------------------------------------------------------

def bundled_scenarios() -> List[str]:
    root = resources.files("sanet") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _scenario_path(text: str):
    p = Path(text)
    if p.exists():
        return p
    candidate = resources.files("sanet") / "scenarios" / f"{text}.toml"
    if candidate.is_file():
        return candidate
    raise ScenarioInvalid(f"no scenario file {text!r}; bundled: {', '.join(bundled_scenarios())}")


def cmd_scenario(args) -> int:
    if args.list:
        for name in bundled_scenarios():
            _out(name)
        return EXIT_OK
    if not args.path:
        raise UsageError("scenario needs a path or bundled name (see --list)")
    sc = loads_scenario(_scenario_path(args.path).read_text(encoding="utf-8"))
    if args.seed is not None:
        sc.seed = args.seed
        sc.link.seed = args.seed
    result = run(sc)
    if args.trace_out:
        Path(args.trace_out).write_bytes(result.trace_bytes())
    if args.verbose:
        sys.stderr.write(result.trace_text())
    rows = evaluate(result)
    for name, ok, detail in rows:
        _out(f"verdict {name.replace(' ', '_')} {'pass' if ok else 'fail'}" + (f" {detail}" if detail else ""))
    passed = all(ok for _, ok, _ in rows)
    _out(f"result {'pass' if passed else 'fail'} events={len(result.trace)} "
         f"sha256={hashlib.sha256(result.trace_bytes()).hexdigest()}")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


# -- argument parsing ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="node config file (TOML)")
    common.add_argument("--transport", choices=("sim", "udp"), help="override the config's transport")
    common.add_argument("--seed", type=int, help="seed every random choice (default: OS entropy)")
    common.add_argument("--trace-out", help="write an event trace to this file")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging on stderr")

    parser = argparse.ArgumentParser(prog="sanet", description="Secure ad-hoc networking node and simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", parents=[common], help="generate a keypair (and optionally a certificate)")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.key and PREFIX.pub")
    p.add_argument("--provider", choices=("default", "toy"), default="default")
    p.add_argument("--ca-key", help="also issue PREFIX.cert signed by this CA private key")
    p.add_argument("--addr", help="certificate subject address")
    p.add_argument("--name", help="certificate subject name (default: prefix name)")
    p.add_argument("--serial", type=int, default=1)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("cert", help="issue or verify certificates")
    cert_sub = p.add_subparsers(dest="action", required=True)
    c = cert_sub.add_parser("issue", parents=[common], help="sign a subject key with a CA key")
    c.add_argument("--provider", choices=("default", "toy"), default="default")
    c.add_argument("--ca-key", required=True, help="CA private key")
    c.add_argument("--key", required=True, help="subject key file, private or public")
    c.add_argument("--addr", required=True, help="subject address")
    c.add_argument("--name", help="subject name (default: key file stem)")
    c.add_argument("--serial", type=int, default=1)
    c.add_argument("--out", required=True, help="certificate output path")
    c.set_defaults(func=cmd_cert)
    c = cert_sub.add_parser("verify", parents=[common], help="check a certificate against a CA public key")
    c.add_argument("cert", help="certificate file")
    c.add_argument("--provider", choices=("default", "toy"), default="default")
    c.add_argument("--ca", required=True, help="CA public key")
    c.set_defaults(func=cmd_cert)

    p = sub.add_parser("run", parents=[common], help="run a node: beacon, accept sessions, receive files")
    p.add_argument("--duration-ms", type=int, help="stop after this long (default: forever on udp)")
    p.add_argument("--receive-dir", help="store received files here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("peers", parents=[common], help="listen for beacons and print the device table")
    p.add_argument("--listen-ms", type=int, default=3000)
    p.set_defaults(func=cmd_peers)

    p = sub.add_parser("send", parents=[common], help="securely send a file to a discovered peer")
    p.add_argument("peer", help="peer address or advertised name")
    p.add_argument("file")
    p.add_argument("--discover-ms", type=int, default=5000)
    p.add_argument("--timeout-ms", type=int, default=30000)
    p.set_defaults(func=cmd_send)

    p = sub.add_parser("scenario", parents=[common], help="run a simulator scenario and audit it")
    p.add_argument("path", nargs="?", help="scenario file or bundled scenario name")
    p.add_argument("--list", action="store_true", help="list bundled scenarios")
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UnknownDevice as exc:
        print(f"error: unknown device {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_DEVICE
    except (UsageError, ConfigInvalid, ScenarioInvalid, InvalidAddress) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SanetError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
