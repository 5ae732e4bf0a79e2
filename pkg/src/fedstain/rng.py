"""Hierarchical random-stream derivation.

Every stochastic component receives its own ``numpy.random.Generator``
derived from the master seed and a key path (e.g. client id, round,
sample index).  Streams for distinct key paths are statistically
independent, and the derivation is order-free, so batch-parallel work
stays deterministic regardless of scheduling.
"""

from __future__ import annotations

import numpy as np

_U32 = 2**32


def _key_to_ints(key) -> list[int]:
    out = []
    for part in key:
        if isinstance(part, (int, np.integer)):
            out.append(int(part) % _U32)
        else:
            # Stable across processes: fold the utf-8 bytes into 32-bit words.
            data = str(part).encode("utf-8")
            acc = len(data) % _U32
            for b in data:
                acc = (acc * 131 + b) % _U32
            out.append(acc)
    return out


def stream(master_seed: int, *key) -> np.random.Generator:
    """Return an independent generator for ``(master_seed, *key)``."""
    seq = np.random.SeedSequence([int(master_seed) % _U32, *_key_to_ints(key)])
    return np.random.Generator(np.random.PCG64(seq))


def child_seed(master_seed: int, *key) -> int:
    """Derive a scalar seed, for components that take a seed rather than a stream."""
    seq = np.random.SeedSequence([int(master_seed) % _U32, *_key_to_ints(key)])
    return int(seq.generate_state(1, np.uint32)[0])
