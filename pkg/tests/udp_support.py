"""Helpers for tests that exercise the loopback multicast backend."""

import random
import socket
import struct
import sys

import pytest

from sanet.transport import DEFAULT_GROUP


def multicast_available():
    try:
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            s.bind(("", 0))
            mreq = struct.pack("4s4s", socket.inet_aton(DEFAULT_GROUP), socket.inet_aton("127.0.0.1"))
            s.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        finally:
            s.close()
        return True
    except OSError:
        return False


requires_udp = pytest.mark.skipif(not multicast_available(), reason="loopback multicast unavailable")


def free_port():
    return random.SystemRandom().randrange(40000, 60000)


def cli_cmd(*args):
    return [sys.executable, "-m", "sanet.cli", *map(str, args)]
