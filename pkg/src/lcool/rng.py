"""Counter-based seedable random streams.

Every stochastic routine in the package takes an :class:`Rng`. Streams are
backed by numpy's Philox generator, so a child stream for sample ``i`` can be
derived from ``(seed, i)`` without touching the parent's state; this keeps
parallel and serial cooling bit-identical.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    """Seeded random stream.

    Parameters
    ----------
    seed : int
        64-bit seed. Negative values are reduced modulo 2**64.
    path : tuple of int, optional
        Spawn path identifying a child stream; ``()`` is the root stream.
    """

    def __init__(self, seed: int = 0, path: tuple[int, ...] = ()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"

    def child(self, index: int) -> "Rng":
        """Independent stream keyed by ``index``; does not advance ``self``."""
        if index < 0:
            raise ValueError("child index must be non-negative")
        return Rng(self.seed, self.path + (int(index),))

    def normal(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        return self._gen.standard_normal(n)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def generator(self) -> np.random.Generator:
        """Underlying numpy generator (shares state with this stream)."""
        return self._gen


def rng_normal(rng: Rng, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. standard-normal values from ``rng``."""
    return rng.normal(n)


def as_rng(seed_or_rng) -> Rng:
    if isinstance(seed_or_rng, Rng):
        return seed_or_rng
    if seed_or_rng is None:
        return Rng(0)
    return Rng(int(seed_or_rng))
