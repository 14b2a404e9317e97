"""Deterministic, splittable random-number streams.

Every sampling routine takes an explicit ``numpy.random.Generator``. Code
that fans out over many paths or batches derives child streams with
:func:`substream`, keyed by integer labels. The same (seed, key) always
yields the same stream, so any batch can be regenerated in isolation and
results never depend on scheduling or worker count.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream"]


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return the counter-based (Philox) stream identified by ``(seed, *key)``.

    Distinct keys give statistically independent streams; identical keys
    give bit-identical streams.
    """
    for k in key:
        if int(k) < 0:
            raise ValueError("stream key labels must be nonnegative integers")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
