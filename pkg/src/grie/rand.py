"""Named, reproducible random substreams derived from a single seed."""

import zlib

import numpy as np


def substream(seed: int, *labels) -> np.random.Generator:
    """Generator for (seed, labels...). Same arguments, same stream, on any platform.

    String labels are hashed with crc32 so streams do not depend on creation
    order; integer labels (e.g. document indices) are used as-is.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            words.append(zlib.crc32(label.encode("utf-8")))
        else:
            words.append(int(label) & 0xFFFFFFFF)
    return np.random.default_rng(words)
