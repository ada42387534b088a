"""Counter-based random streams.

Every random draw in the package is keyed by (seed, stream, counter) through
numpy's Philox generator, so parallel and serial execution orders produce
bitwise-identical results.
"""

import numpy as np

# Fixed stream ids so unrelated consumers never share a substream.
STREAM_CONFIG = 1
STREAM_DENSITY = 2
STREAM_FIELD = 3
STREAM_NOISE = 4
STREAM_TRIAL = 5


def generator(seed, stream, counter=0):
    """Philox generator for (seed, stream, counter).

    The key carries (seed, stream); the counter block carries the trial or
    time-step index so that streams can be opened out of order.
    """
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)])
    ctr = np.array([np.uint64(counter & 0xFFFFFFFFFFFFFFFF), 0, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=ctr, key=key))


def normal_increments(seed, step, shape):
    """Standard normal block for SDE step `step`, independent across steps."""
    return generator(seed, STREAM_NOISE, counter=step).standard_normal(shape)
