"""Seeded random sources.

Every stochastic routine takes an explicit integer seed. Independent streams
(per batch, per sample block) are derived with :class:`numpy.random.SeedSequence`
spawning so that results are reproducible regardless of how work is split.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int | np.random.SeedSequence | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


def haar_unitary(n: int, rng: np.random.Generator, size: tuple[int, ...] = ()) -> np.ndarray:
    """Haar-distributed unitaries of shape ``size + (n, n)``.

    QR of a complex Ginibre matrix with the phases of ``diag(R)`` moved into Q.
    """
    shape = tuple(size) + (n, n)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    phase = diag / np.abs(diag)
    return q * phase[..., None, :]
