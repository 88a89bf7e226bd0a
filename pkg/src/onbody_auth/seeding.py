"""Seed derivation.

Every random stream in the package comes from ``rng_for(seed, *keys)``:
the keys are folded into the root seed with SplitMix64 and the result seeds
numpy's PCG64 bit generator. Both algorithms are fixed and platform
independent, so a (seed, keys) pair always yields the same stream.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> int:
    z = (state + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK
    # strings map through their UTF-8 bytes so the result is not affected by hash randomisation
    acc = 0xCBF29CE484222325
    for byte in str(key).encode("utf-8"):
        acc = ((acc ^ byte) * 0x100000001B3) & _MASK
    return acc


def derive_seed(seed: int, *keys) -> int:
    state = splitmix64(int(seed) & _MASK)
    for key in keys:
        state = splitmix64(state ^ _key_int(key))
    return state


def rng_for(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))
