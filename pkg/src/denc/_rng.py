"""Named, reproducible random sub-streams derived from one root seed."""

import zlib

import numpy as np


def stream(seed, name, *keys):
    """Return a Generator keyed by ``(seed, name, *keys)``.

    Two calls with the same arguments produce identical streams; changing any
    key produces an independent one. ``name`` is hashed with CRC32 so the
    mapping is stable across interpreter runs.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    entropy.extend(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))
