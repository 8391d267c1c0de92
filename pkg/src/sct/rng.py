"""Deterministic counter-based random streams.

Sampling must replay bit-for-bit given the same seed, independent of call
history, so draws come from a stateless splitmix64 counter stream rather
than a stateful generator.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_TWO53 = float(1 << 53)


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer applied elementwise to uint64 values."""
    x = (x ^ (x >> np.uint64(30))) * _MUL1
    x = (x ^ (x >> np.uint64(27))) * _MUL2
    return x ^ (x >> np.uint64(31))


def uniforms(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Return n uniforms in [0, 1) at counter positions offset..offset+n-1."""
    idx = np.arange(offset, offset + n, dtype=np.uint64)
    base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    x = _mix(base + (idx + np.uint64(1)) * _GOLDEN)
    return (x >> np.uint64(11)).astype(np.float64) / _TWO53


def standard_normals(seed: int, n: int) -> np.ndarray:
    """Return n standard normal draws via Box-Muller on the uniform stream.

    Draw order is fixed: uniform pair k produces normals 2k (cosine branch)
    and 2k+1 (sine branch).
    """
    pairs = (n + 1) // 2
    u = uniforms(seed, 2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    # 1 - u1 lies in (0, 1], so the log is finite
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    angle = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:n]


def derive_seed(*parts: int | str) -> int:
    """Stable 64-bit seed derived from a mixed tuple of ints and strings."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8"))
        else:
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")
