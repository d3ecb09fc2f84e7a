"""Named deterministic random streams.

Every stochastic stage draws from a stream derived from (global seed,
stream name parts). Derivation goes through SHA-256, so streams are
independent of Python's salted hash() and stable across platforms and
processes. Re-running any stage with the same seed therefore replays the
exact same randomness regardless of what ran before it.
"""

import hashlib

import numpy as np


def stream_key(global_seed: int, *parts) -> int:
    """Collapse (seed, *parts) into a stable 128-bit integer key."""
    h = hashlib.sha256()
    h.update(str(int(global_seed)).encode("utf-8"))
    for part in parts:
        h.update(b"\x00")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "little")


def seed_stream(global_seed: int, *parts) -> np.random.Generator:
    """Return a PCG64 generator for the named sub-stream."""
    return np.random.default_rng(np.random.SeedSequence(stream_key(global_seed, *parts)))
