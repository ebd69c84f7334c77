"""Counter-based random number streams.

Every random draw in the sampler comes from a Philox generator keyed on
(root seed, purpose, iteration, index). Streams are therefore pure
functions of those labels: the same seed reproduces the same run
bit-for-bit no matter how work is scheduled across threads, and no
stream's position depends on how much randomness another phase consumed.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Streams", "mix64"]

# Stream purposes. Values are arbitrary but frozen: changing them changes
# every seeded run. (Gaps are retired purposes; do not reuse.)
INIT = 1
ASSIGN = 2
WEIGHTS = 3
THETA = 4
MOVE = 6
DOWNSAMPLE = 8
GENERATE = 9

_MASK64 = 0xFFFFFFFFFFFFFFFF


def mix64(x: int) -> int:
    """SplitMix64 finalizer: a bijective scramble of a 64-bit integer."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class Streams:
    """Factory for independent, reproducible generator streams.

    Each (purpose, iteration, index) triple maps to a distinct Philox key;
    distinct keys give statistically independent streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def get(self, purpose: int, iteration: int = 0, index: int = 0) -> np.random.Generator:
        # Pack the labels injectively: purpose < 2^8, index < 2^24 in
        # practice; iteration takes the remaining headroom. mix64 is
        # bijective, so distinct packings give distinct keys.
        label = (purpose & 0xFF) | ((index & 0xFFFFFF) << 8) | ((iteration & 0xFFFFFFFF) << 32)
        key = np.array([self.seed, mix64(label)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))
