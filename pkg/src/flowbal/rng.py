"""Named random substreams derived from one root seed.

Each stream gets its own ``SeedSequence`` spawn key, so switching policy (which
changes how many tie-break or routing draws are consumed) never shifts the
arrival or flow-size sample path.
"""
from __future__ import annotations

import hashlib

import numpy as np

_FIXED = {"arrivals": 0, "sizes": 1, "tie": 2, "bcf": 3}
_CHANNEL_BASE = 1000


def stream_key(name: str) -> int:
    if name in _FIXED:
        return _FIXED[name]
    if name.startswith("channel"):
        return _CHANNEL_BASE + int(name[len("channel"):])
    raise KeyError(name)


def substream(seed: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_key(name),))
    return np.random.Generator(np.random.PCG64(ss))


def make_streams(seed: int, M: int) -> dict[str, np.random.Generator]:
    names = list(_FIXED) + [f"channel{m}" for m in range(M)]
    return {n: substream(seed, n) for n in names}


def point_seed(base_seed: int, experiment: str, point: int, replication: int) -> int:
    """Stable 63-bit seed for one grid point; adding points never reshuffles others."""
    h = hashlib.blake2b(f"{int(base_seed)}|{experiment}|{point}|{replication}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1
