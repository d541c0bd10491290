"""Named random substreams derived from a single experiment seed.

Every piece of randomness in a run (weight init, client sampling, batch
shuffling, data synthesis) draws from its own substream so adding a consumer
never perturbs the others.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return a generator for the substream identified by ``path`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


# Fixed top-level stream ids. Values are arbitrary but frozen: changing them
# changes every seeded result.
STREAM_DATA = 0
STREAM_SPLIT = 1
STREAM_PARTITION = 2
STREAM_INIT = 3
STREAM_SAMPLING = 4
STREAM_SHUFFLE = 5
