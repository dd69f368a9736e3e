"""Finite open-boundary matrix product states.

Site tensors are stored with index order ``(physical n, left bond a, right bond b)``.
The matrix form of a site tensor combines ``(n, a)`` into the row index, so a
left-canonical tensor is an isometry of shape ``(d * D_left, D_right)``.

Bonds are labelled ``0..N``: bond ``k`` sits to the right of the first ``k``
sites, so site ``i`` (0-based) lies between bonds ``i`` and ``i + 1``. The
right environment ``Gamma_k`` lives on bond ``k``; ``Gamma_N = 1`` and
``Gamma_{k} = sum_n A_n Gamma_{k+1} A_n^dagger`` for the site to the left.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from ._rng import haar_unitary, make_rng
from .errors import DimensionError, PreconditionError, ResourceError

CANONICAL_TOL = 1e-10
DENSE_CAP = 2**20


@dataclass(frozen=True)
class DenseState:
    """A state vector together with its tensor-factor dimensions."""

    amplitudes: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        if int(np.prod(self.dims)) != self.amplitudes.size:
            raise DimensionError(f"dims {self.dims} do not match {self.amplitudes.size} amplitudes")
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("dense state has non-finite entries")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def vdot(self, other: "DenseState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class Segment:
    """A contiguous block of sites ``first..last`` (0-based, inclusive).

    ``D_eL`` and ``D_eR`` are the edge-ancilla dimensions, i.e. the bond
    dimensions at bonds ``first`` and ``last + 1``.
    """

    first: int
    last: int
    D_eL: int = 1
    D_eR: int = 1

    def __post_init__(self):
        if not 0 <= self.first <= self.last:
            raise DimensionError(f"invalid segment {self.first}..{self.last}")
        if self.D_eL < 1 or self.D_eR < 1:
            raise DimensionError("edge dimensions must be >= 1")

    @property
    def size(self) -> int:
        return self.last - self.first + 1

    @property
    def sites(self) -> range:
        return range(self.first, self.last + 1)

    @classmethod
    def of_chain(cls, chain: "MpsChain", first: int, last: int) -> "Segment":
        prof = chain.bond_profile
        return cls(first, last, prof[first], prof[last + 1])


@dataclass(frozen=True)
class MpsChain:
    """Left-canonical MPS. Immutable; environments are computed lazily."""

    sites: tuple[np.ndarray, ...]
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        sites = tuple(np.asarray(s, dtype=complex) for s in self.sites)
        object.__setattr__(self, "sites", sites)
        if not sites:
            raise DimensionError("empty chain")
        d = sites[0].shape[0]
        if sites[0].shape[1] != 1 or sites[-1].shape[2] != 1:
            raise DimensionError("boundary bonds must have dimension 1")
        for i, (a, b) in enumerate(zip(sites[:-1], sites[1:])):
            if a.shape[2] != b.shape[1]:
                raise DimensionError(f"bond mismatch between sites {i} and {i + 1}")
        if any(s.ndim != 3 or s.shape[0] != d for s in sites):
            raise DimensionError("all sites must be rank-3 with equal physical dimension")
        if self.check:
            res = max(canonical_residuals(sites))
            if res > CANONICAL_TOL:
                raise PreconditionError(f"chain is not left-canonical (residual {res:.2e})")

    @property
    def N(self) -> int:
        return len(self.sites)

    @property
    def d(self) -> int:
        return self.sites[0].shape[0]

    @property
    def bond_profile(self) -> tuple[int, ...]:
        return (1,) + tuple(s.shape[2] for s in self.sites)

    @cached_property
    def right_envs(self) -> list[np.ndarray]:
        return _right_envs(self.sites)

    def canonical_residual(self) -> float:
        return max(canonical_residuals(self.sites))


def uniform_bond_profile(N: int, d: int, D: int) -> list[int]:
    """Bond dimensions ``min(D, d**k, d**(N-k))`` for ``k = 0..N``."""
    return [min(D, d**k, d ** (N - k)) for k in range(N + 1)]


def full_bond_profile(N: int, d: int) -> list[int]:
    return [min(d**k, d ** (N - k)) for k in range(N + 1)]


def validate_bond_profile(N: int, d: int, profile: Sequence[int]) -> list[int]:
    profile = [int(x) for x in profile]
    if len(profile) != N + 1:
        raise DimensionError(f"bond profile needs {N + 1} entries, got {len(profile)}")
    if profile[0] != 1 or profile[-1] != 1:
        raise DimensionError("bond profile must start and end with 1")
    for k in range(1, N + 1):
        if not 1 <= profile[k] <= d * profile[k - 1]:
            raise DimensionError(f"bond {k}: D={profile[k]} exceeds d*D_prev={d * profile[k - 1]}")
    return profile


def random_mps(N: int, d: int, bond_profile: Sequence[int] | int, seed) -> MpsChain:
    """Haar-random left-canonical chain.

    Site ``i`` is ``A_n[a, b] = U[(n, a), b]`` for a Haar unitary ``U`` of size
    ``d * D_left`` truncated to its first ``D_right`` columns (the columns
    reached from the reference input state ``|0>``).
    """
    if isinstance(bond_profile, (int, np.integer)):
        bond_profile = uniform_bond_profile(N, d, int(bond_profile))
    profile = validate_bond_profile(N, d, bond_profile)
    rng = make_rng(seed)
    sites = []
    for i in range(N):
        dl, dr = profile[i], profile[i + 1]
        u = haar_unitary(d * dl, rng)
        sites.append(u[:, :dr].reshape(d, dl, dr))
    return MpsChain(tuple(sites))


def product_state(local_states: Sequence[np.ndarray]) -> MpsChain:
    sites = []
    for v in local_states:
        v = np.asarray(v, dtype=complex)
        sites.append((v / np.linalg.norm(v)).reshape(-1, 1, 1))
    return MpsChain(tuple(sites))


def canonical_residuals(sites: Sequence[np.ndarray]) -> list[float]:
    """``max |sum_n A_n^dagger A_n - 1|`` per site (batched inputs reduce over the batch)."""
    out = []
    for a in sites:
        g = np.einsum("...nab,...nac->...bc", a.conj(), a)
        eye = np.eye(a.shape[-1])
        out.append(float(np.max(np.abs(g - eye))) if g.size else 0.0)
    return out


def left_canonicalize(sites: Sequence[np.ndarray]) -> list[np.ndarray]:
    """QR sweep from the left; supports a leading batch axis.

    Gauge factors are pushed to the right, so the represented state changes only
    by its norm. The phase of the final scalar is kept.
    """
    out = []
    carry = None
    for i, a in enumerate(sites):
        if carry is not None:
            a = np.einsum("...xa,...nab->...nxb", carry, a)
        *batch, d, dl, dr = a.shape
        m = a.reshape(*batch, d * dl, dr)
        q, r = np.linalg.qr(m)
        diag = np.diagonal(r, axis1=-2, axis2=-1)
        absd = np.abs(diag)
        ph = np.where(absd > 0, diag / np.where(absd > 0, absd, 1.0), 1.0)
        q = q * ph[..., None, :]
        r = ph.conj()[..., :, None] * r
        # at the last site r is the positive 1x1 norm; its phase already sits in q
        carry = r
        out.append(q.reshape(*batch, d, dl, dr))
    return out


def canonicalize(chain_or_sites) -> MpsChain:
    sites = chain_or_sites.sites if isinstance(chain_or_sites, MpsChain) else chain_or_sites
    return MpsChain(tuple(left_canonicalize(list(sites))))


def _right_envs(sites: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Right environments ``Gamma_0..Gamma_N``; batched over leading axes."""
    N = len(sites)
    batch = sites[0].shape[:-3]
    envs: list[np.ndarray] = [None] * (N + 1)  # type: ignore[list-item]
    envs[N] = np.ones(batch + (1, 1), dtype=complex)
    for i in range(N - 1, -1, -1):
        a = sites[i]
        envs[i] = np.einsum("...nab,...bc,...ndc->...ad", a, envs[i + 1], a.conj())
    return envs


def right_environments(chain: MpsChain) -> list[np.ndarray]:
    """Environments ``[Gamma_0, ..., Gamma_N]`` indexed by bond.

    ``Gamma_N`` is the 1x1 identity; each ``Gamma_k`` is Hermitian, positive
    semi-definite with unit trace for a normalized left-canonical chain.
    """
    if chain.canonical_residual() > CANONICAL_TOL:
        raise PreconditionError("right_environments requires a left-canonical chain")
    return chain.right_envs


def dense_from_sites(sites: Sequence[np.ndarray], left_open: bool = False, right_open: bool = False) -> np.ndarray:
    """Contract site tensors into a vector; open boundary bonds become extra factors."""
    psi = np.transpose(sites[0], (1, 0, 2))  # (aL, n, b)
    dl = psi.shape[0]
    psi = psi.reshape(dl * psi.shape[1], psi.shape[2])
    for a in sites[1:]:
        psi = np.einsum("xb,nbc->xnc", psi, a).reshape(-1, a.shape[2])
    dr = psi.shape[1]
    if not left_open:
        if dl != 1:
            raise DimensionError("left boundary bond is not trivial")
    if not right_open:
        if dr != 1:
            raise DimensionError("right boundary bond is not trivial")
    return psi.reshape(-1)


def to_dense(chain: MpsChain, cap: int = DENSE_CAP) -> DenseState:
    size = chain.d**chain.N
    if size > cap:
        raise ResourceError(f"dense state of size {size} exceeds cap {cap}")
    return DenseState(dense_from_sites(chain.sites), (chain.d,) * chain.N)


def segment_to_dense(chain_or_sites, segment: Segment, cap: int = DENSE_CAP) -> DenseState:
    """Segment MPS over ``(ancilla_L, n_first..n_last, ancilla_R)`` with a ``1/sqrt(D_eR)`` factor."""
    if isinstance(chain_or_sites, MpsChain):
        if segment.last >= chain_or_sites.N:
            raise DimensionError("segment extends past the chain")
        sites = [chain_or_sites.sites[i] for i in segment.sites]
    else:
        sites = list(chain_or_sites)
        if len(sites) != segment.size:
            raise DimensionError("number of tensors does not match segment size")
    if sites[0].shape[1] != segment.D_eL or sites[-1].shape[2] != segment.D_eR:
        raise DimensionError(
            f"edge dims ({sites[0].shape[1]}, {sites[-1].shape[2]}) do not match "
            f"segment ({segment.D_eL}, {segment.D_eR})"
        )
    d = sites[0].shape[0]
    size = segment.D_eL * segment.D_eR * d**segment.size
    if size > cap:
        raise ResourceError(f"dense segment of size {size} exceeds cap {cap}")
    vec = dense_from_sites(sites, left_open=True, right_open=True) / np.sqrt(segment.D_eR)
    return DenseState(vec, (segment.D_eL,) + (d,) * segment.size + (segment.D_eR,))


def entropy_from_probs(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def von_neumann_entropy(rho: np.ndarray) -> float:
    """``-Tr rho ln rho`` in nats, with ``0 ln 0 = 0``."""
    w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    return entropy_from_probs(np.clip(w, 0.0, None))


def cut_entropy(chain: MpsChain, bond_index: int) -> float:
    if not 1 <= bond_index <= chain.N - 1:
        raise DimensionError(f"bond index {bond_index} outside 1..{chain.N - 1}")
    return von_neumann_entropy(chain.right_envs[bond_index])


def overlap(chain_a: MpsChain, chain_b: MpsChain) -> complex:
    """``<a|b>`` by left-to-right transfer contraction."""
    if chain_a.N != chain_b.N or chain_a.d != chain_b.d:
        raise DimensionError("chains differ in length or physical dimension")
    return complex(sites_overlap(chain_a.sites, chain_b.sites))


def sites_overlap(bra: Sequence[np.ndarray], ket: Sequence[np.ndarray]) -> np.ndarray:
    env = np.ones(bra[0].shape[:-3] + (1, 1), dtype=complex)
    for a, b in zip(bra, ket):
        env = np.einsum("...xy,...nxa,...nyb->...ab", env, a.conj(), b)
    return env[..., 0, 0]


def reduced_density_matrix(psi: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace of ``|psi><psi|`` onto the factors in ``keep`` (kept in order)."""
    dims = list(dims)
    keep = sorted(keep)
    rest = [k for k in range(len(dims)) if k not in keep]
    t = psi.reshape(dims).transpose(keep + rest)
    dk = int(np.prod([dims[k] for k in keep])) if keep else 1
    m = t.reshape(dk, -1)
    return m @ m.conj().T


def dense_cut_entropy(psi: np.ndarray, d: int, N: int, k: int) -> float:
    """Entanglement entropy across bond ``k`` from the singular values of ``psi``."""
    s = np.linalg.svd(psi.reshape(d**k, d ** (N - k)), compute_uv=False)
    return entropy_from_probs(s**2)
