"""Counter-based splitmix64 stream for reproducible operands across platforms."""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)

    def next_u64(self, count: int) -> np.ndarray:
        """The next ``count`` outputs, identical to calling scalar splitmix64 in a loop."""
        with np.errstate(over="ignore"):
            steps = np.arange(1, count + 1, dtype=np.uint64)
            z = self.state + steps * _GOLDEN
            self.state = self.state + np.uint64(count) * _GOLDEN
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
            return z ^ (z >> np.uint64(31))

    def int16(self, shape, full_range: bool = False) -> np.ndarray:
        """Uniform int16 values in [-128, 127], or the whole int16 range."""
        count = int(np.prod(shape))
        span, lo = (65536, -32768) if full_range else (256, -128)
        # 2**64 is a multiple of both spans, so the modulus is unbiased
        vals = (self.next_u64(count) % np.uint64(span)).astype(np.int64) + lo
        return vals.astype(np.int16).reshape(shape)
