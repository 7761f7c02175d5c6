"""Reference implementations written independently of the package, from the
published algorithm definitions. Tests compare package output against these."""

import hashlib
import struct

M64 = (1 << 64) - 1


def splitmix64_stream(seed):
    """Steele, Lea and Flood's SplitMix64 output function."""
    x = seed & M64
    while True:
        x = (x + 0x9E3779B97F4A7C15) & M64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        yield z ^ (z >> 31)


def unit_float(u64):
    return (u64 >> 11) / float(1 << 53)


def crc32_bitwise(data):
    """IEEE 802.3 CRC-32, reflected, one bit at a time."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def hmac_sha256(key, msg):
    """HMAC from the RFC 2104 construction, using only the raw hash."""
    block = 64
    if len(key) > block:
        key = hashlib.sha256(key).digest()
    key = key.ljust(block, b"\0")
    ipad = bytes(b ^ 0x36 for b in key)
    opad = bytes(b ^ 0x5C for b in key)
    return hashlib.sha256(opad + hashlib.sha256(ipad + msg).digest()).digest()


def kdf(master, n1, n2, label):
    out = hmac_sha256(master, label.encode() + b"\0" + n1 + n2)
    return out[:16] if label.startswith("ENC") else out


def length_prefixed(fields):
    return b"".join(struct.pack(">H", len(f)) + f for f in fields)


def simulate_medium(seed, p_loss, p_dup, window, submissions):
    """Replay the fault model for a sequence of (recipient_key) submissions.

    Returns a dict recipient -> list of submission indices in queue order.
    Draw order per copy: loss, duplication, then one reorder draw per copy.
    """
    rng = splitmix64_stream(seed)
    queues = {}
    for idx, who in enumerate(submissions):
        q = queues.setdefault(who, [])
        if p_loss > 0 and unit_float(next(rng)) < p_loss:
            continue
        copies = 2 if p_dup > 0 and unit_float(next(rng)) < p_dup else 1
        for _ in range(copies):
            pos = len(q)
            if window > 0:
                pos = max(0, pos - next(rng) % (window + 1))
            q.insert(pos, idx)
    return queues


def aes128_cbc_pkcs7(key, iv, plaintext):
    """CBC mode and PKCS#7 padding built by hand over single-block AES."""
    from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

    pad = 16 - len(plaintext) % 16
    data = plaintext + bytes([pad]) * pad
    ecb = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    prev, out = iv, b""
    for i in range(0, len(data), 16):
        block = bytes(a ^ b for a, b in zip(data[i:i + 16], prev))
        prev = ecb.update(block)
        out += prev
    return out
