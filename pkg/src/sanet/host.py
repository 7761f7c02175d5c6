"""Runtimes that drive nodes against a clock.

:class:`SimHost` co-hosts any number of nodes on one simulated medium and
jumps virtual time straight to the next due event. :class:`UdpHost` runs a
single node on the loopback multicast backend in wall-clock time. Both
queue node events and hand them to registered handlers between steps, so
handlers may freely call back into the node.
"""

from __future__ import annotations

import random
from collections import deque
from typing import Callable, Deque, Dict, List, Optional, Tuple

from .handshake import Identity
from .manager import Node, NodeSettings
from .transport import DEFAULT_GROUP, DEFAULT_PORT, LinkModel, SimMedium, UdpEndpoint

Handler = Callable[[str, object], None]


class Host:
    def __init__(self):
        self.nodes: Dict[str, Node] = {}
        self.events: Deque[Tuple[str, object]] = deque()
        self.handlers: List[Handler] = []

    def now(self) -> int:
        raise NotImplementedError

    def step(self, limit: int) -> None:
        raise NotImplementedError

    def _listener(self, name: str):
        return lambda ev: self.events.append((name, ev))

    def _make_node(self, name, identity, endpoint, rng, settings) -> Node:
        node = Node(identity, endpoint, rng, settings, listener=self._listener(name))
        self.nodes[name] = node
        return node

    def dispatch(self) -> None:
        while self.events:
            name, ev = self.events.popleft()
            for h in list(self.handlers):
                h(name, ev)

    def run_until(self, predicate: Callable[[], bool], timeout_ms: Optional[int]) -> bool:
        """Step until ``predicate()`` holds (True) or ``timeout_ms`` elapses (False).

        ``timeout_ms=None`` runs until the predicate holds."""
        deadline = None if timeout_ms is None else self.now() + timeout_ms
        while True:
            self.dispatch()
            if predicate():
                return True
            if deadline is not None and self.now() >= deadline:
                return False
            self.step(deadline if deadline is not None else self.now() + 1000)

    def start(self) -> None:
        for node in self.nodes.values():
            node.start(self.now())

    def close(self) -> None:
        for node in self.nodes.values():
            node.stop()


class SimHost(Host):
    def __init__(self, link: LinkModel | None = None, latency: int = 1):
        super().__init__()
        self.medium = SimMedium(link or LinkModel(), latency)

    def add_node(self, name: str, identity: Identity, rng: random.Random,
                 settings: NodeSettings | None = None) -> Node:
        return self._make_node(name, identity, self.medium.attach(identity.address), rng, settings)

    def now(self) -> int:
        return self.medium.now

    def step(self, limit: int) -> None:
        due = [t for t in [self.medium.next_due()] + [n.next_timer() for n in self.nodes.values()]
               if t is not None]
        t = min(due) if due else limit
        t = max(min(t, limit), self.medium.now)
        self.medium.advance(t)
        for node in self.nodes.values():
            node.poll(t)


class UdpHost(Host):
    idle_wait = 100

    def __init__(self, group: str = DEFAULT_GROUP, port: int = DEFAULT_PORT):
        super().__init__()
        self.group, self.port = group, port
        self.endpoint: Optional[UdpEndpoint] = None

    def add_node(self, name: str, identity: Identity, rng: random.Random,
                 settings: NodeSettings | None = None) -> Node:
        if self.nodes:
            raise ValueError("UdpHost drives exactly one node")
        self.endpoint = UdpEndpoint(identity.address, self.group, self.port)
        return self._make_node(name, identity, self.endpoint, rng, settings)

    def now(self) -> int:
        return self.endpoint.now()

    def step(self, limit: int) -> None:
        (node,) = self.nodes.values()
        now = self.now()
        wake = min(t for t in (node.next_timer(), limit, now + self.idle_wait) if t is not None)
        frame = self.endpoint.poll_frame(wake)
        if frame is not None:
            node.handle_frame(frame, self.now())
        node.poll(self.now())

    def close(self) -> None:
        super().close()
        if self.endpoint is not None:
            self.endpoint.detach()
