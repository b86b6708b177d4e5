"""Named, counter-based random streams.

Every stochastic consumer in the library draws from its own stream,
identified by a root seed plus a tuple of labels (strings/ints). Streams
are Philox generators keyed by a hash of the labels, so they are
independent, reproducible, and order-insensitive: asking for the same
(seed, labels) twice always yields a generator in the same state.
"""

import hashlib

import numpy as np


def stream(seed: int, *labels) -> np.random.Generator:
    """Return a fresh Generator for the consumer identified by `labels`.

    The Philox key is derived from blake2b(seed, labels), so distinct
    label tuples give statistically independent streams.
    """
    digest = hashlib.blake2b(
        repr((int(seed),) + tuple(labels)).encode(), digest_size=32
    ).digest()
    entropy = int.from_bytes(digest, "little")
    seed_seq = np.random.SeedSequence(entropy)
    return np.random.Generator(np.random.Philox(seed_seq))
