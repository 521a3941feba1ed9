"""Seeded random streams with Box-Muller Gaussian draws."""
from __future__ import annotations

import math

import numpy as np

ALGORITHM = "pcg64+box-muller"


class Rng:
    """Uniform draws come from numpy's PCG64; Gaussians are produced from
    pairs of uniforms with the Box-Muller transform so the normal stream is a
    documented function of the uniform stream.
    """

    algorithm = ALGORITHM

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def normal(self, shape=()) -> np.ndarray:
        n = math.prod(shape) if isinstance(shape, tuple) else int(shape)
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1], keeps log finite
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n].reshape(shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def child(self, stream: int) -> "Rng":
        """Independent generator derived from this seed and a stream number."""
        return Rng((self.seed * 1_000_003 + 7919 * (stream + 1)) % 2**64)
