"""Local coordinates around a left-canonical MPS.

For site ``i`` let ``A`` be the site tensor in matrix form (rows ``(n, a)``,
columns ``b``) and ``A_perp`` an orthonormal basis of its orthogonal complement,
so that ``[A, A_perp]`` is unitary. A coordinate block ``X`` of shape
``(d*D_left - D_right, D_right)`` defines

    B = A_perp @ X @ Gamma^{-1/2},

where ``Gamma`` is the right environment on the bond after site ``i``. Then
``A^dagger B = 0`` and the vectors ``d_mu Psi`` obtained by replacing ``A`` with
the ``B`` of a unit ``X`` are orthonormal and orthogonal to ``Psi``.

Coordinate tensors ``x_i`` share the layout of site tensors: flattening
``(n, a)`` into rows, the first ``D_right`` rows are identically zero and the
remaining rows hold ``X``. In the bulk (``D_left == D_right``) the zero rows are
exactly the physical-index-0 slice. Modes of site ``i`` are the entries of ``X``
in row-major order; global mode order is site-major.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _contract as C
from .errors import (
    ConditioningWarning,
    DimensionError,
    IllConditionedEnvironment,
    PreconditionError,
)
from .mps import CANONICAL_TOL, DENSE_CAP, DenseState, MpsChain, dense_from_sites, left_canonicalize

ENV_FLOOR = 1e-12


# ---------------------------------------------------------------- basic pieces


def complement(site: np.ndarray) -> np.ndarray:
    """Orthonormal complement ``A_perp`` of a (possibly batched) isometric site."""
    *batch, d, dl, dr = site.shape
    a = site.reshape(*batch, d * dl, dr)
    q, _ = np.linalg.qr(a, mode="complete")
    return q[..., :, dr:]


def env_power(gamma: np.ndarray, power: float, strict: bool = False) -> np.ndarray:
    """``Gamma**power`` for Hermitian PSD ``Gamma`` with eigenvalues floored at 1e-12."""
    w, v = np.linalg.eigh(0.5 * (gamma + np.swapaxes(gamma.conj(), -1, -2)))
    if np.any(w < ENV_FLOOR):
        if strict:
            raise IllConditionedEnvironment(f"environment eigenvalue {w.min():.3e} below {ENV_FLOOR}")
        warnings.warn(
            f"environment eigenvalue {w.min():.3e} floored at {ENV_FLOOR}", ConditioningWarning, stacklevel=3
        )
        w = np.maximum(w, ENV_FLOOR)
    return np.einsum("...ik,...k,...jk->...ij", v, w**power, v.conj())


def mode_counts(bond_profile: Sequence[int], d: int) -> list[int]:
    return [(d * bond_profile[i] - bond_profile[i + 1]) * bond_profile[i + 1] for i in range(len(bond_profile) - 1)]


@dataclass(frozen=True)
class ModeIndex:
    """Bookkeeping between global mode numbers and ``(site, row, column)``."""

    counts: tuple[int, ...]
    shapes: tuple[tuple[int, int], ...]

    @classmethod
    def of(cls, chain: MpsChain) -> "ModeIndex":
        prof, d = chain.bond_profile, chain.d
        shapes = tuple((d * prof[i] - prof[i + 1], prof[i + 1]) for i in range(chain.N))
        return cls(tuple(r * c for r, c in shapes), shapes)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def offsets(self) -> list[int]:
        return list(np.concatenate([[0], np.cumsum(self.counts)]).astype(int))

    def site_slice(self, i: int) -> slice:
        off = self.offsets
        return slice(off[i], off[i + 1])

    def site_of(self, mode: int) -> int:
        return int(np.searchsorted(self.offsets, mode, side="right") - 1)

    def segment_modes(self, first: int, last: int) -> np.ndarray:
        off = self.offsets
        return np.arange(off[first], off[last + 1])


def _site_data(chain: MpsChain, strict: bool = False):
    """Per-site ``(A_perp, Gamma^{-1/2})`` for the reference chain."""
    cache = chain.__dict__.get("_tangent_cache")
    if cache is not None and not strict:
        return cache
    if chain.canonical_residual() > CANONICAL_TOL:
        raise PreconditionError("tangent-space operations require a left-canonical chain")
    perps = [complement(a) for a in chain.sites]
    isq = [env_power(chain.right_envs[i + 1], -0.5, strict) for i in range(chain.N)]
    data = (perps, isq)
    if not strict:
        chain.__dict__["_tangent_cache"] = data
    return data


# ------------------------------------------------------------ coordinate I/O


def zero_coords(chain: MpsChain) -> list[np.ndarray]:
    return [np.zeros_like(a) for a in chain.sites]


def coords_from_vector(chain: MpsChain, vec: np.ndarray) -> list[np.ndarray]:
    """Coordinate tensors ``x_i`` from a flat complex mode vector."""
    idx = ModeIndex.of(chain)
    vec = np.asarray(vec, dtype=complex)
    if vec.shape != (idx.total,):
        raise DimensionError(f"expected {idx.total} modes, got shape {vec.shape}")
    out = []
    for i, a in enumerate(chain.sites):
        d, dl, dr = a.shape
        x = np.zeros((d * dl, dr), dtype=complex)
        x[dr:] = vec[idx.site_slice(i)].reshape(idx.shapes[i])
        out.append(x.reshape(d, dl, dr))
    return out


def vector_from_coords(chain: MpsChain, x: Sequence[np.ndarray]) -> np.ndarray:
    parts = []
    for a, xi in zip(chain.sites, x):
        d, dl, dr = a.shape
        parts.append(np.asarray(xi).reshape(d * dl, dr)[dr:].reshape(-1))
    return np.concatenate(parts) if parts else np.zeros(0, complex)


def check_coords(chain: MpsChain, x: Sequence[np.ndarray], tol: float = 0.0) -> None:
    if len(x) != chain.N:
        raise DimensionError("one coordinate tensor per site is required")
    for i, (a, xi) in enumerate(zip(chain.sites, x)):
        if np.shape(xi) != a.shape:
            raise DimensionError(f"coordinate tensor {i} has shape {np.shape(xi)}, expected {a.shape}")
        d, dl, dr = a.shape
        if np.max(np.abs(np.asarray(xi).reshape(d * dl, dr)[:dr]), initial=0.0) > tol:
            raise PreconditionError(f"coordinate tensor {i} has non-zero entries in its null block")


# ------------------------------------------------------------- B tensors


def _b_from_block(perp: np.ndarray, block: np.ndarray, isq: np.ndarray, shape) -> np.ndarray:
    b = np.einsum("...rm,...mc,cb->...rb", perp, block, isq)
    return b.reshape(b.shape[:-2] + tuple(shape))


def b_tensor(chain: MpsChain, x: Sequence[np.ndarray], i: int, strict: bool = False) -> np.ndarray:
    """``B = A_perp X Gamma^{-1/2}`` for site ``i`` (``A^dagger B = 0``)."""
    check_coords(chain, x)
    perps, isq = _site_data(chain, strict)
    d, dl, dr = chain.sites[i].shape
    block = np.asarray(x[i], dtype=complex).reshape(d * dl, dr)[dr:]
    return _b_from_block(perps[i], block, isq[i], (d, dl, dr))


def unit_b_tensors(chain: MpsChain, i: int) -> np.ndarray:
    """All unit-mode B tensors of site ``i``, stacked as ``(modes, d, D_left, D_right)``."""
    perps, isq = _site_data(chain)
    d, dl, dr = chain.sites[i].shape
    rows = d * dl - dr
    eye = np.eye(rows * dr, dtype=complex).reshape(rows * dr, rows, dr)
    return _b_from_block(perps[i], eye, isq[i], (d, dl, dr))


def thouless_sites(sites: Sequence[np.ndarray], bs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """``exp(B A^dagger - A B^dagger) A`` per site, in closed form; batched.

    With ``B = A_perp Y`` and ``Y = W S V^dagger`` the exponential applied to ``A``
    equals ``A V cos(S) V^dagger + A_perp W sin(S) V^dagger``.
    """
    out = []
    for a, b in zip(sites, bs):
        *batch, d, dl, dr = b.shape
        am = np.broadcast_to(a, b.shape).reshape(*batch, d * dl, dr)
        bm = b.reshape(*batch, d * dl, dr)
        if dr == d * dl:
            out.append(np.array(np.broadcast_to(a, b.shape)))
            continue
        perp = complement(np.broadcast_to(a, b.shape))
        y = np.swapaxes(perp.conj(), -1, -2) @ bm
        w, s, vh = np.linalg.svd(y, full_matrices=False)
        v = np.swapaxes(vh.conj(), -1, -2)
        cos_part = am + am @ (v * (np.cos(s) - 1.0)[..., None, :]) @ vh
        sin_part = perp @ (w * np.sin(s)[..., None, :]) @ vh
        out.append((cos_part + sin_part).reshape(*batch, d, dl, dr))
    return out


def thouless_update(chain: MpsChain, x: Sequence[np.ndarray], strict: bool = False) -> MpsChain:
    """Move along the exponential chart: every site ``A -> exp(B A^dagger - A B^dagger) A``."""
    check_coords(chain, x, tol=0.0)
    bs = [b_tensor(chain, x, i, strict) for i in range(chain.N)]
    new = thouless_sites(chain.sites, bs)
    res = max(_residuals(new))
    if res > CANONICAL_TOL:
        new = left_canonicalize(new)
    return MpsChain(tuple(new))


def _residuals(sites):
    from .mps import canonical_residuals

    return canonical_residuals(sites)


# ------------------------------------------------------------ dense vectors


def _dense_or_raise(chain: MpsChain, cap: int):
    if chain.d**chain.N > cap:
        from .errors import ResourceError

        raise ResourceError(f"dense vector of size {chain.d ** chain.N} exceeds cap {cap}")


def _split_mode(chain: MpsChain, i: int, mu: int) -> None:
    idx = ModeIndex.of(chain)
    if not 0 <= i < chain.N:
        raise DimensionError(f"site {i} out of range")
    if not 0 <= mu < idx.counts[i]:
        raise DimensionError(f"site {i} has {idx.counts[i]} modes, got mode {mu}")


def tangent_vector(chain: MpsChain, i: int, mu: int, cap: int = DENSE_CAP) -> DenseState:
    """Dense ``d_mu^{(i)} Psi``: the chain with site ``i`` replaced by a unit-mode B."""
    _dense_or_raise(chain, cap)
    _split_mode(chain, i, mu)
    sites = list(chain.sites)
    sites[i] = unit_b_tensors(chain, i)[mu]
    return DenseState(dense_from_sites(sites), (chain.d,) * chain.N)


def second_tangent_vector(chain: MpsChain, i: int, mu: int, j: int, nu: int, cap: int = DENSE_CAP) -> DenseState:
    if not i < j:
        raise ValueError(f"second tangent vectors need i < j, got {i}, {j}")
    _dense_or_raise(chain, cap)
    _split_mode(chain, i, mu)
    _split_mode(chain, j, nu)
    sites = list(chain.sites)
    sites[i] = unit_b_tensors(chain, i)[mu]
    sites[j] = unit_b_tensors(chain, j)[nu]
    return DenseState(dense_from_sites(sites), (chain.d,) * chain.N)


def tangent_basis(chain: MpsChain, cap: int = DENSE_CAP) -> np.ndarray:
    """Columns are the dense tangent vectors in global mode order."""
    _dense_or_raise(chain, cap)
    return np.stack([dense_from_sites(s) for s in _single_ket_list(chain)], axis=1) if ModeIndex.of(
        chain
    ).total else np.zeros((chain.d**chain.N, 0), complex)


def pair_modes(chain: MpsChain, pairs: Sequence[tuple[int, int]]) -> list[tuple[int, int, int, int]]:
    """Combined index ``(i, mu, j, nu)`` for each requested site pair, in order."""
    idx = ModeIndex.of(chain)
    out = []
    for i, j in pairs:
        if not 0 <= i < j < chain.N:
            raise ValueError(f"site pairs need 0 <= i < j < N, got ({i}, {j})")
        out.extend((i, mu, j, nu) for mu in range(idx.counts[i]) for nu in range(idx.counts[j]))
    return out


def second_tangent_basis(chain: MpsChain, pairs: Sequence[tuple[int, int]], cap: int = DENSE_CAP) -> np.ndarray:
    _dense_or_raise(chain, cap)
    cols = [second_tangent_vector(chain, *m, cap=cap).amplitudes for m in pair_modes(chain, pairs)]
    return np.stack(cols, axis=1) if cols else np.zeros((chain.d**chain.N, 0), complex)


def dense_tangent_coordinates(chain: MpsChain, phi: np.ndarray) -> np.ndarray:
    return tangent_basis(chain).conj().T @ phi


# ------------------------------------------------- contraction-based kernels


def _single_ket_list(chain: MpsChain) -> list[list[np.ndarray]]:
    out = []
    for i in range(chain.N):
        for b in unit_b_tensors(chain, i):
            sites = list(chain.sites)
            sites[i] = b
            out.append(sites)
    return out


def _stack(site_lists: list[list[np.ndarray]]) -> list[np.ndarray]:
    return [np.stack([s[k] for s in site_lists]) for k in range(len(site_lists[0]))]


def single_kets(chain: MpsChain) -> list[np.ndarray]:
    """All single tangent vectors as a batched chain (batch axis = global mode)."""
    return _stack(_single_ket_list(chain))


def pair_kets(chain: MpsChain, pairs: Sequence[tuple[int, int]]) -> list[np.ndarray]:
    lists = []
    bcache = {}
    for i, mu, j, nu in pair_modes(chain, pairs):
        for s in (i, j):
            if s not in bcache:
                bcache[s] = unit_b_tensors(chain, s)
        sites = list(chain.sites)
        sites[i] = bcache[i][mu]
        sites[j] = bcache[j][nu]
        lists.append(sites)
    return _stack(lists)


def coords_from_gradients(chain: MpsChain, grads: Sequence[np.ndarray], sites: Sequence[int] | None = None) -> np.ndarray:
    """Mode coordinates ``A_perp^dagger G Gamma^{-1/2}`` from site gradients, concatenated."""
    perps, isq = _site_data(chain)
    sites = range(chain.N) if sites is None else sites
    parts = []
    for i in sites:
        g = grads[i]
        *batch, d, dl, dr = g.shape
        c = np.einsum("rm,...rc,cb->...mb", perps[i].conj(), g.reshape(*batch, d * dl, dr), isq[i])
        parts.append(c.reshape(*batch, -1))
    return np.concatenate(parts, axis=-1)


def tangent_coordinates(chain: MpsChain, ket: Sequence[np.ndarray], mpo=None) -> np.ndarray:
    """``<d_mu^{(i)} Psi| W |ket>`` for all modes; ``ket`` may be batched."""
    grads = C.all_gradients(chain.sites, ket, mpo)
    return coords_from_gradients(chain, grads)


def pair_coordinates(
    chain: MpsChain, ket: Sequence[np.ndarray], pairs: Sequence[tuple[int, int]], mpo=None
) -> np.ndarray:
    """``<d_mu^{(i)} d_nu^{(j)} Psi| W |ket>`` over ``pair_modes(chain, pairs)``.

    The bra carries a unit B at ``i``; the gradient at ``j`` of the resulting
    overlap is projected onto the site-``j`` modes. Extra leading axes of ``ket``
    are kept in front.
    """
    pm = pair_modes(chain, pairs)
    if not pm:
        return np.zeros(ket[0].shape[:-3] + (0,), complex)
    firsts = sorted({i for i, _ in pairs})
    idx = ModeIndex.of(chain)
    results = {}
    kbatch = ket[0].shape[:-3]
    for i in firsts:
        if idx.counts[i] == 0:
            for j in {j for a, j in pairs if a == i}:
                results[(i, j)] = np.zeros(kbatch + (0, idx.counts[j]), complex)
            continue
        bras = []
        for b in unit_b_tensors(chain, i):
            sites = list(chain.sites)
            sites[i] = b
            bras.append(sites)
        bra = _stack(bras)  # batch (modes_i,)
        kb = [k[..., None, :, :, :] for k in ket]  # ket batch (..., 1)
        grads = C.all_gradients(bra, kb, mpo)
        js = sorted({j for a, j in pairs if a == i})
        for j in js:
            results[(i, j)] = coords_from_gradients(chain, grads, [j])  # (..., modes_i, modes_j)
    out = []
    for i, j in pairs:
        r = results[(i, j)]
        out.append(r.reshape(r.shape[:-2] + (idx.counts[i] * idx.counts[j],)))
    return np.concatenate(out, axis=-1)


# ------------------------------------------------------------- Gram, eps, Delta


@dataclass(frozen=True)
class Grammian:
    """Overlaps of second-tangent vectors; rows/columns follow ``modes``."""

    matrix: np.ndarray
    modes: tuple[tuple[int, int, int, int], ...]

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0))


def grammian(chain: MpsChain, site_pairs: Sequence[tuple[int, int]], method: str = "contraction") -> Grammian:
    modes = tuple(pair_modes(chain, site_pairs))
    if method == "dense":
        v = second_tangent_basis(chain, site_pairs)
        g = v.conj().T @ v
    elif method == "contraction":
        if not modes:
            g = np.zeros((0, 0), complex)
        else:
            kets = pair_kets(chain, site_pairs)
            g = pair_coordinates(chain, kets, site_pairs).T  # rows: bra modes
    else:
        raise ValueError(f"unknown method {method!r}")
    return Grammian(g, modes)


def effective_epsilon(chain: MpsChain, H, method: str = "contraction") -> np.ndarray:
    """``eps[(i,mu),(j,nu)] = <d_mu^{(i)} Psi| H |d_nu^{(j)} Psi>``."""
    _check_h(chain, H)
    if method == "dense":
        v = tangent_basis(chain)
        return v.conj().T @ (H.to_dense() @ v)
    if method != "contraction":
        raise ValueError(f"unknown method {method!r}")
    if ModeIndex.of(chain).total == 0:
        return np.zeros((0, 0), complex)
    kets = single_kets(chain)
    return tangent_coordinates(chain, kets, H.to_mpo()).T


def vacuum_energy(chain: MpsChain, H) -> float:
    _check_h(chain, H)
    return float(np.real(C.expectation(chain.sites, chain.sites, H.to_mpo())))


def separation_weights(pairs_modes, dos: Callable[[int], float] | Sequence[float] | None) -> np.ndarray:
    """``rho(j - i)`` for each combined pair mode; ``dos`` is 1-indexed by separation."""
    if dos is None:
        return np.ones(len(pairs_modes))
    out = []
    for i, _, j, _ in pairs_modes:
        sep = j - i
        r = dos(sep) if callable(dos) else dos[sep - 1]
        out.append(float(r))
    w = np.array(out)
    if np.any(~(w > 0)):
        raise ValueError("density of states must be positive at every needed separation")
    return w


def all_pairs(N: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(N) for j in range(i + 1, N)]


def naive_pair_amplitudes(chain: MpsChain, H, pairs=None, method: str = "contraction") -> np.ndarray:
    """``<d_mu^{(i)} d_nu^{(j)} Psi| H |Psi>`` over ``pair_modes(chain, pairs)``."""
    _check_h(chain, H)
    pairs = all_pairs(chain.N) if pairs is None else pairs
    if method == "dense":
        v = second_tangent_basis(chain, pairs)
        psi = dense_from_sites(chain.sites)
        return v.conj().T @ H.apply_dense(psi)
    return pair_coordinates(chain, list(chain.sites), pairs, H.to_mpo())


def anomalous_delta(chain: MpsChain, H, dos=None, method: str = "contraction") -> np.ndarray:
    """Pair-creation couplings ``Delta`` as a mode-by-mode matrix.

    ``Delta[(i,mu),(j,nu)] = <d_mu^{(i)} d_nu^{(j)} Psi| H |Psi> / rho(j - i)`` for
    ``i < j``; entries with ``i >= j`` are zero. ``dos=None`` means ``rho = 1``.
    """
    pairs = all_pairs(chain.N)
    pm = pair_modes(chain, pairs)
    w = separation_weights(pm, dos)
    amps = naive_pair_amplitudes(chain, H, pairs, method) / w
    idx = ModeIndex.of(chain)
    off = idx.offsets
    out = np.zeros((idx.total, idx.total), complex)
    for (i, mu, j, nu), val in zip(pm, amps):
        out[off[i] + mu, off[j] + nu] = val
    return out


@dataclass(frozen=True)
class CouplingMatrices:
    epsilon: np.ndarray
    delta: np.ndarray
    E0: float


def coupling_matrices(chain: MpsChain, H, dos=None, method: str = "contraction") -> CouplingMatrices:
    return CouplingMatrices(
        effective_epsilon(chain, H, method), anomalous_delta(chain, H, dos, method), vacuum_energy(chain, H)
    )


def _check_h(chain: MpsChain, H) -> None:
    if H.N != chain.N or H.d != chain.d:
        raise DimensionError("Hamiltonian and chain differ in size")
