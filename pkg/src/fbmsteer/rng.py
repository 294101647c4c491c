"""Labelled, seed-derived random substreams.

Every random draw in the package comes from ``substream(seed, key)``: the key
names what is being drawn (stream kind, path index, mode index), so results do
not depend on batch size, worker count or evaluation order.
"""

from __future__ import annotations

import numpy as np

STREAM_FBM = (0,)
STREAM_KERNEL_REP = (1,)
STREAM_QFBM = (2,)


def substream(seed: int, key: tuple[int, ...]) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))
