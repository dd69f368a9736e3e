"""Local spin-chain Hamiltonians and their matrix-product-operator form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, ResourceError
from .mps import DENSE_CAP

HERMITIAN_TOL = 1e-12

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

CHAOTIC_ISING = {"J": 1.0, "g": 1.05, "h": 0.5}
INTEGRABLE_ISING = {"J": 1.0, "g": 1.05, "h": 0.0}


def _check_hermitian(m: np.ndarray, what: str) -> None:
    if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise ValueError(f"{what} is not Hermitian")


@dataclass(frozen=True)
class LocalHamiltonian:
    """Sum of one-site and nearest-neighbour two-site Hermitian terms.

    ``two_site_terms`` holds ``(i, h)`` with ``h`` a ``d**2 x d**2`` matrix acting
    on sites ``i, i+1`` (row index ``(n_i, n_{i+1})``). ``one_site_terms`` holds
    ``(i, h)`` with ``h`` a ``d x d`` matrix.
    """

    N: int
    d: int
    two_site_terms: tuple = ()
    one_site_terms: tuple = ()
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        two = tuple((int(i), np.asarray(h, dtype=complex)) for i, h in self.two_site_terms)
        one = tuple((int(i), np.asarray(h, dtype=complex)) for i, h in self.one_site_terms)
        object.__setattr__(self, "two_site_terms", two)
        object.__setattr__(self, "one_site_terms", one)
        d = self.d
        for i, h in two:
            if not 0 <= i < self.N - 1 or h.shape != (d * d, d * d):
                raise DimensionError(f"bad two-site term on bond {i} with shape {h.shape}")
            _check_hermitian(h, f"two-site term {i}")
        for i, h in one:
            if not 0 <= i < self.N or h.shape != (d, d):
                raise DimensionError(f"bad one-site term on site {i} with shape {h.shape}")
            _check_hermitian(h, f"one-site term {i}")

    def bond_matrix(self, i: int) -> np.ndarray:
        out = np.zeros((self.d**2, self.d**2), dtype=complex)
        for k, h in self.two_site_terms:
            if k == i:
                out += h
        return out

    def site_matrix(self, i: int) -> np.ndarray:
        out = np.zeros((self.d, self.d), dtype=complex)
        for k, h in self.one_site_terms:
            if k == i:
                out += h
        return out

    def norm_bound(self) -> float:
        """Sum of spectral norms of the terms (an upper bound on ``||H||``)."""
        return float(sum(np.linalg.norm(h, 2) for _, h in self.two_site_terms + self.one_site_terms))

    def to_dense(self, cap: int = DENSE_CAP) -> np.ndarray:
        dim = self.d**self.N
        if dim > cap:
            raise ResourceError(f"dense Hamiltonian of dimension {dim} exceeds cap {cap}")
        if dim > 2**14:
            raise ResourceError(f"dense Hamiltonian of dimension {dim} is too large to store")
        out = np.zeros((dim, dim), dtype=complex)
        d = self.d
        for i, h in self.two_site_terms:
            out += np.kron(np.kron(np.eye(d**i), h), np.eye(d ** (self.N - i - 2)))
        for i, h in self.one_site_terms:
            out += np.kron(np.kron(np.eye(d**i), h), np.eye(d ** (self.N - i - 1)))
        return out

    def apply_dense(self, psi: np.ndarray) -> np.ndarray:
        """``H @ psi`` without building the dense matrix."""
        d, N = self.d, self.N
        t = psi.reshape((d,) * N)
        out = np.zeros_like(t)
        for i, h in self.two_site_terms:
            h4 = h.reshape(d, d, d, d)
            moved = np.tensordot(h4, t, axes=([2, 3], [i, i + 1]))
            out += np.moveaxis(moved, [0, 1], [i, i + 1])
        for i, h in self.one_site_terms:
            moved = np.tensordot(h, t, axes=([1], [i]))
            out += np.moveaxis(moved, 0, i)
        return out.reshape(-1)

    def norm(self) -> float:
        """Spectral norm of the dense Hamiltonian (desk scale only)."""
        w = np.linalg.eigvalsh(self.to_dense())
        return float(np.max(np.abs(w)))

    def to_mpo(self) -> list[np.ndarray]:
        """MPO tensors ``W[w_left, w_right, n_out, n_in]``.

        The virtual index runs over ``0`` (nothing placed yet), ``1..r`` (an open
        two-site term, ``r`` its operator-Schmidt rank) and ``last`` (all terms
        placed). Boundary tensors keep only the first row / last column.
        """
        d, N = self.d, self.N
        eye = np.eye(d, dtype=complex)
        lefts, rights = [], []
        for i in range(N - 1):
            h = self.bond_matrix(i).reshape(d, d, d, d)  # (n_i, n_j, m_i, m_j)
            m = h.transpose(0, 2, 1, 3).reshape(d * d, d * d)
            u, s, vh = np.linalg.svd(m)
            keep = s > 1e-14 * max(s[0], 1.0) if s.size else s > 0
            r = int(np.count_nonzero(keep))
            lefts.append([(u[:, k] * np.sqrt(s[k])).reshape(d, d) for k in range(r)])
            rights.append([(vh[k] * np.sqrt(s[k])).reshape(d, d) for k in range(r)])
        # virtual dimension on bond k (between sites k-1 and k) for 1 <= k <= N-1
        wdim = [2 + len(lefts[k - 1]) for k in range(1, N)]
        mpo = []
        for i in range(N):
            wl = wdim[i - 1] if i > 0 else 2
            wr = wdim[i] if i < N - 1 else 2
            w = np.zeros((wl, wr, d, d), dtype=complex)
            w[0, 0] = eye
            w[wl - 1, wr - 1] = eye
            w[0, wr - 1] = self.site_matrix(i)
            if i < N - 1:
                for k, op in enumerate(lefts[i]):
                    w[0, 1 + k] = op
            if i > 0:
                for k, op in enumerate(rights[i - 1]):
                    w[1 + k, wr - 1] = op
            if i == 0:
                w = w[:1]
            if i == N - 1:
                w = w[:, -1:]
            mpo.append(w)
        return mpo


def ising(N: int, J: float, g: float, h: float, name: str = "ising") -> LocalHamiltonian:
    """``J sum Z_i Z_{i+1} + g sum X_i + h sum Z_i`` with open boundaries."""
    zz = J * np.kron(PAULI_Z, PAULI_Z)
    field_ = g * PAULI_X + h * PAULI_Z
    return LocalHamiltonian(
        N,
        2,
        tuple((i, zz) for i in range(N - 1)),
        tuple((i, field_) for i in range(N)),
        name=name,
    )


def chaotic_ising(N: int) -> LocalHamiltonian:
    return ising(N, **CHAOTIC_ISING, name="chaotic_ising")


def integrable_ising(N: int) -> LocalHamiltonian:
    return ising(N, **INTEGRABLE_ISING, name="integrable_ising")


def scaled_identity(N: int, d: int, E: float = 1.0) -> LocalHamiltonian:
    return LocalHamiltonian(N, d, (), tuple((i, (E / N) * np.eye(d)) for i in range(N)), name="identity")


def random_local(N: int, d: int, seed, scale: float = 1.0) -> LocalHamiltonian:
    """Random nearest-neighbour Hamiltonian with GUE-like terms."""
    from ._rng import make_rng

    rng = make_rng(seed)

    def herm(n):
        z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        return scale * (z + z.conj().T) / 4

    return LocalHamiltonian(
        N,
        d,
        tuple((i, herm(d * d)) for i in range(N - 1)),
        tuple((i, herm(d)) for i in range(N)),
        name="random",
    )


PRESETS = {"chaotic_ising": chaotic_ising, "integrable_ising": integrable_ising}


def preset(name: str, N: int) -> LocalHamiltonian:
    try:
        return PRESETS[name](N)
    except KeyError:
        raise ValueError(f"unknown Hamiltonian preset {name!r}; choose from {sorted(PRESETS)}") from None


def sum_terms(terms: Sequence[LocalHamiltonian]) -> LocalHamiltonian:
    first = terms[0]
    return LocalHamiltonian(
        first.N,
        first.d,
        sum((t.two_site_terms for t in terms), ()),
        sum((t.one_site_terms for t in terms), ()),
    )
