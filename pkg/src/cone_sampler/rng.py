"""Deterministic random substreams.

Per-identity streams are derived from ``(base_seed, index)`` with the
SplitMix64 finalizer, so a stream depends only on its key and never on
iteration order or worker count::

    z = (base_seed + 0x9E3779B97F4A7C15 * (index + 1)) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    key = z ^ (z >> 31)

The key seeds a PCG64 bit generator. This mapping is part of the file-level
reproducibility contract and must not change.
"""
import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(base_seed, index):
    """SplitMix64 avalanche of ``base_seed`` advanced ``index + 1`` steps."""
    z = (int(base_seed) + _GOLDEN * (int(index) + 1)) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def substream(base_seed, index):
    """Independent generator for work item ``index`` under ``base_seed``."""
    return np.random.Generator(np.random.PCG64(mix64(base_seed, index)))


def as_generator(rng):
    """Accept a Generator, an integer seed, or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
