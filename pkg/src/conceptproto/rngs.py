"""Deterministic RNG stream derivation.

All randomness in the package flows from a single root seed. Independent
streams are derived by name so that adding or reordering consumers does not
perturb unrelated streams, and parallel evaluation stays reproducible
regardless of scheduling.
"""

import zlib

import numpy as np


def child_rng(seed, *tags):
    """Return a Generator for the stream identified by (seed, *tags).

    Tags may be strings or integers; strings are hashed with crc32 so the
    derivation is stable across processes and Python versions.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            entropy.append(int(tag) & 0xFFFFFFFF)
        else:
            entropy.append(zlib.crc32(str(tag).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))
