"""Deterministic random source: one seed fixes the whole sample stream."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError

# random() yields 53-bit doubles in [0, 1); clamping 0 up to 2**-53 keeps
# the nested logs of the Gumbel transform finite.
_OPEN_EPS = 2.0 ** -53


def gumbel_from_uniform(u: float) -> float:
    """Inverse-transform a uniform draw into a standard Gumbel sample."""
    if not 0.0 < u < 1.0:
        raise DomainError(f"uniform draw must lie in (0, 1), got {u}")
    return -math.log(-math.log(u))


class Rng:
    """Seeded PCG64 generator; single-owner, not safe to share."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform_open(self) -> float:
        return max(self._gen.random(), _OPEN_EPS)

    def gumbel(self) -> float:
        return gumbel_from_uniform(self.uniform_open())

    def gumbels(self, n: int) -> np.ndarray:
        u = np.maximum(self._gen.random(n), _OPEN_EPS)
        return -np.log(-np.log(u))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def unit_vector(self, dim: int) -> np.ndarray:
        v = self._gen.standard_normal(dim)
        return v / np.linalg.norm(v)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def choice(self, n: int, size: int) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=False)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def gumbel_sample(rng: Rng) -> float:
    """Draw u ~ Uniform(0, 1) and return ``-log(-log(u))``."""
    return rng.gumbel()
