"""Deterministic noise streams.

A :class:`NoiseSource` is keyed by ``(seed, stream_id)``. Uniforms come from
numpy's PCG64 seeded through ``SeedSequence(seed, spawn_key=(stream_id,))``.
Both Gaussian and Laplace variates are produced by inverse-CDF transforms of
those uniforms, shifted to the open interval (0, 1) so no draw maps to an
infinite value. Given the same key and the same call sequence the output is
bit-identical.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

_U64 = (1 << 64) - 1
# numpy's float64 uniforms are k * 2**-53, k in [0, 2**53); adding half a step
# keeps them strictly inside (0, 1).
_HALF_STEP = 2.0 ** -54


def _check_u64(value, name):
    value = int(value)
    if not 0 <= value <= _U64:
        raise ValueError(f"{name} must be an unsigned 64-bit integer")
    return value


@dataclass
class NoiseSource:
    """Stateful generator; not safe to share across threads mid-stream."""

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = _check_u64(self.seed, "seed")
        self.stream_id = _check_u64(self.stream_id, "stream_id")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size) + _HALF_STEP

    def standard_normal(self, size) -> np.ndarray:
        return ndtri(self.uniform(size))

    def standard_laplace(self, size) -> np.ndarray:
        """Unit-scale Laplace via the inverse CDF."""
        u = self.uniform(size) - 0.5
        return -np.sign(u) * np.log1p(-2.0 * np.abs(u))


def seed_digest(seed: int) -> int:
    """64-bit digest of a seed, used to compare seeds without revealing them."""
    seed = _check_u64(seed, "seed")
    h = hashlib.sha256(seed.to_bytes(8, "little")).digest()
    return int.from_bytes(h[:8], "little")


def array_digest(values) -> str:
    arr = np.ascontiguousarray(values, dtype="<f8")
    return hashlib.sha256(arr.tobytes()).hexdigest()
