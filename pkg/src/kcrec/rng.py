"""Named random sub-streams derived from one root seed."""
import zlib

import numpy as np

STREAMS = ("features", "init", "sampling", "negatives", "clustering", "split", "synth")


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name``; ``extra`` ints select a sub-stream."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) & 0xFFFFFFFF for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))
