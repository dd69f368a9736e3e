"""Environment contractions for ``<bra| W |ket>`` with optional MPO ``W``.

All functions accept a leading batch shape on the site tensors (``...``); MPO
tensors are never batched. Left environments have index order
``(bra bond, [mpo bond,] ket bond)``; right environments likewise.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def left_envs(bra: Sequence[np.ndarray], ket: Sequence[np.ndarray], mpo=None) -> list[np.ndarray]:
    batch = np.broadcast_shapes(bra[0].shape[:-3], ket[0].shape[:-3])
    N = len(ket)
    out = [None] * (N + 1)
    if mpo is None:
        out[0] = np.ones(batch + (1, 1), dtype=complex)
        for i in range(N):
            out[i + 1] = np.einsum("...xy,...nxa,...nyb->...ab", out[i], bra[i].conj(), ket[i])
    else:
        out[0] = np.ones(batch + (1, 1, 1), dtype=complex)
        for i in range(N):
            t = np.einsum("...xwy,...myb->...xwmb", out[i], ket[i])
            t = np.einsum("...xwmb,wvnm->...xnvb", t, mpo[i])
            out[i + 1] = np.einsum("...xnvb,...nxa->...avb", t, bra[i].conj())
    return out


def right_envs(bra: Sequence[np.ndarray], ket: Sequence[np.ndarray], mpo=None) -> list[np.ndarray]:
    batch = np.broadcast_shapes(bra[0].shape[:-3], ket[0].shape[:-3])
    N = len(ket)
    out = [None] * (N + 1)
    if mpo is None:
        out[N] = np.ones(batch + (1, 1), dtype=complex)
        for i in range(N - 1, -1, -1):
            out[i] = np.einsum("...xy,...nax,...nby->...ab", out[i + 1], bra[i].conj(), ket[i])
    else:
        out[N] = np.ones(batch + (1, 1, 1), dtype=complex)
        for i in range(N - 1, -1, -1):
            t = np.einsum("...xvy,...mby->...xvmb", out[i + 1], ket[i])
            t = np.einsum("...xvmb,wvnm->...xnwb", t, mpo[i])
            out[i] = np.einsum("...xnwb,...nax->...awb", t, bra[i].conj())
    return out


def site_gradient(le: np.ndarray, ket_site: np.ndarray, re: np.ndarray, w=None) -> np.ndarray:
    """``d<bra|W|ket> / d conj(bra_i)`` with the bra tensor at site ``i`` removed."""
    if w is None:
        return np.einsum("...xa,...nab,...yb->...nxy", le, ket_site, re)
    t = np.einsum("...xwa,...mab->...xwmb", le, ket_site)
    t = np.einsum("...xwmb,wvnm->...xnvb", t, w)
    return np.einsum("...xnvb,...yvb->...nxy", t, re)


def all_gradients(bra: Sequence[np.ndarray], ket: Sequence[np.ndarray], mpo=None) -> list[np.ndarray]:
    """Site gradients of ``<bra|W|ket>`` with respect to every conjugated bra tensor."""
    le = left_envs(bra, ket, mpo)
    re = right_envs(bra, ket, mpo)
    ws = mpo if mpo is not None else [None] * len(ket)
    return [site_gradient(le[i], ket[i], re[i + 1], ws[i]) for i in range(len(ket))]


def expectation(bra: Sequence[np.ndarray], ket: Sequence[np.ndarray], mpo=None) -> np.ndarray:
    le = left_envs(bra, ket, mpo)[-1]
    return le.reshape(le.shape[: le.ndim - (3 if mpo is not None else 2)])
