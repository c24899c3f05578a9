"""Counter-based random streams.

Every random draw in the package comes from a Philox4x64 generator keyed by
``(seed, stream name, index)``. Domain ``i`` of a dataset therefore gets the
same samples no matter how many domains are generated alongside it.
"""

import zlib

import numpy as np

__all__ = ["stream", "substreams"]


def _name_key(name):
    return zlib.crc32(name.encode("utf-8"))


def stream(seed, name, *index):
    """Return an independent generator for ``(seed, name, *index)``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(_name_key(name),) + tuple(int(i) for i in index),
    )
    return np.random.Generator(np.random.Philox(ss))


def substreams(seed, name, count):
    return [stream(seed, name, i) for i in range(count)]
