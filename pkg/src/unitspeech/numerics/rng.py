"""Seeded, splittable random streams.

Every stream is a Philox-4x64 counter-based generator keyed by
``SeedSequence(seed, spawn_key=(crc32(name),))``. Two streams with the same
seed and name produce the same numbers on every platform numpy supports;
different names give statistically independent streams.
"""

import zlib

import numpy as np


def stream(seed, name=""):
    key = (zlib.crc32(name.encode("utf-8")),) if name else ()
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def truncated_normal(rng, shape, std=0.02, bound=2.0):
    """Normal(0, std) samples redrawn until they fall inside ``bound`` stds."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std
