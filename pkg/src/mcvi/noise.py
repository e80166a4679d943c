"""Sources of primitive standard-normal noise for reparameterized estimators.

Estimators pull noise in a fixed order, so any source that hands out the same
numbers reproduces the same computation: a seeded generator for Monte Carlo,
or a fixed matrix of quadrature nodes for exact expectations.
"""

from __future__ import annotations

import numpy as np


class NoiseExhausted(IndexError):
    pass


class NoiseSource:
    """Lane-batched standard normals from a numpy Generator."""

    def __init__(self, rng: np.random.Generator | int, batch: int = 1):
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.batch = batch
        self.used = 0

    def normal(self, d: int) -> list[np.ndarray]:
        block = self.rng.standard_normal((d, self.batch))
        self.used += d
        return list(block)


class FixedNoise:
    """Hands out consecutive rows of a ``(dims, lanes)`` matrix."""

    def __init__(self, rows: np.ndarray):
        self.rows = np.asarray(rows, dtype=float)
        self.batch = self.rows.shape[1]
        self.used = 0

    def normal(self, d: int) -> list[np.ndarray]:
        if self.used + d > self.rows.shape[0]:
            raise NoiseExhausted(f"requested {d} more noise dimensions, only {self.rows.shape[0] - self.used} left")
        out = list(self.rows[self.used:self.used + d])
        self.used += d
        return out


def seeded(seed: int, batch: int) -> NoiseSource:
    return NoiseSource(np.random.default_rng(seed), batch)
