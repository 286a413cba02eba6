"""Deterministic RNG streams.

Every source of randomness in the package derives from a root seed plus a
small integer context (stream id, epoch, sample index, ...) through
``numpy``'s SeedSequence. Re-running with the same seed therefore replays
the exact same draws, and resuming mid-run re-derives the same streams.
"""

import numpy as np

from .errors import ConfigurationError

# Stream ids keep independent uses of the root seed from colliding.
STREAM_INIT = 1
STREAM_BATCH = 2
STREAM_AUGMENT = 3
STREAM_SYNTH = 4
STREAM_KMEANS = 5
STREAM_GMM = 6
STREAM_DIMS = 7


def rng_for(seed, *context):
    """Generator keyed by (seed, *context); all parts must be ints >= 0."""
    parts = [int(seed), *[int(c) for c in context]]
    if any(p < 0 for p in parts):
        raise ConfigurationError("rng seed and context values must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(parts))
