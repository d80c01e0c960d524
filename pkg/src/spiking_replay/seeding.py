"""Named RNG substreams derived from one master seed.

Every source of randomness in the package (weight init, shuffling, class
re-initialization, replay selection, data synthesis) pulls its generator from
``substream`` so that individual stages are reproducible in isolation.
"""

import hashlib

import numpy as np


def substream(seed: int, *names) -> np.random.Generator:
    """Return the deterministic generator for ``seed`` qualified by ``names``.

    The same (seed, names) pair always yields an identical stream; distinct
    names yield statistically independent streams.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        digest = hashlib.blake2s(str(name).encode("utf-8"), digest_size=8).digest()
        words.append(int.from_bytes(digest, "little"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
