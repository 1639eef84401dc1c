"""Counter-based random streams.

Ensembles are cut into fixed-size blocks and every block owns a Philox
stream spawned from one ``SeedSequence``. Results therefore depend on the
seed and the block size only, never on how blocks are scheduled.
"""

from __future__ import annotations

import numpy as np

BLOCK_SIZE = 256


def block_generators(seed: int, n_blocks: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def block_slices(n_samples: int, block_size: int = BLOCK_SIZE) -> list[slice]:
    return [slice(s, min(s + block_size, n_samples)) for s in range(0, n_samples, block_size)]


def as_generator(random_state) -> np.random.Generator:
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(random_state)))
