"""Shared test fixtures: a ReliableLink driver and identity builders."""

import random

from sanet.crypto import ToyRsaProvider
from sanet.handshake import Credentials, Identity
from sanet.reliable import Delivered, DeliveryFailed, SendComplete


class LinkNet:
    def __init__(self, medium, links):
        self.medium = medium
        self.links = {}
        self.events = {}
        for link in links:
            self.links[link.address] = (link, medium.attach(link.address))
            self.events[link.address] = []

    def emit(self, addr, out):
        _, ep = self.links[addr]
        for f in out.frames:
            ep.send_frame(f)
        self.events[addr].extend(out.events)

    def send(self, src, dest, msg):
        link, _ = self.links[src]
        msg_id, out = link.send(dest, msg, self.medium.now)
        self.emit(src, out)
        return msg_id

    def run(self, until=10**9):
        m = self.medium
        while True:
            dues = [m.next_due()] + [link.next_timer() for link, _ in self.links.values()]
            dues = [d for d in dues if d is not None]
            if not dues or min(dues) > until:
                return
            t = max(min(dues), m.now)
            m.advance(t)
            for addr, (link, ep) in self.links.items():
                while (f := ep.poll_frame(t)) is not None:
                    self.emit(addr, link.on_frame(f, t))
                nt = link.next_timer()
                if nt is not None and nt <= t:
                    self.emit(addr, link.on_timer(t))

    def delivered(self, addr):
        return [e for e in self.events[addr] if isinstance(e, Delivered)]

    def completed(self, addr):
        return [e for e in self.events[addr] if isinstance(e, SendComplete)]

    def failed(self, addr):
        return [e for e in self.events[addr] if isinstance(e, DeliveryFailed)]


_PROVIDER = ToyRsaProvider()
_CA = _PROVIDER.generate_keypair(random.Random("test-ca"))


def make_identity(name, addr, cert=True, psk=None, require_auth=False):
    """Deterministic toy-RSA identity under a shared test CA."""
    p = _PROVIDER
    kp = p.generate_keypair(random.Random(f"key-{name}")) if cert else None
    c = p.issue_certificate(_CA.private, addr, name, kp.public, 1) if cert else None
    creds = Credentials(kp, c, _CA.public, psk, "group" if psk else "")
    return Identity(addr, name, creds, p, require_auth)
