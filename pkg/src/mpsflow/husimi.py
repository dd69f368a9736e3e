"""Monte-Carlo functionals of the MPS-Husimi distribution of a segment.

A segment of ``k`` sites with edge ancillae ``D_eL``, ``D_eR`` is represented by
vectors over ``(ancilla_L, physical_1..k, ancilla_R)``. The padded density
matrix is ``I/D_eL (x) rho (x) I/D_eR`` and the Husimi value of a segment MPS
``Psi`` is ``Q = Psi^dagger rho_pad Psi``. Haar-random segment MPS resolve the
identity with constant ``V = 1 / (d^k D_eL D_eR)``, so every functional below is
``(1/V) E[...]`` over uniformly sampled segment MPS.

Error bars come from batch means; each batch draws from its own sub-seed of
the root seed, so results do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._rng import haar_unitary, make_rng, spawn_seeds
from .errors import DimensionError, NumericalConsistencyError
from .mps import DenseState, Segment, entropy_from_probs, reduced_density_matrix, von_neumann_entropy

PSD_TOL = 1e-10


@dataclass(frozen=True)
class PaddedDensity:
    rho_tilde: np.ndarray
    D_eL: int
    D_eR: int

    @property
    def dim(self) -> int:
        return self.rho_tilde.shape[0]


def _check_density(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError("density matrix must be square")
    if np.max(np.abs(rho - rho.conj().T), initial=0.0) > PSD_TOL:
        raise ValueError("density matrix is not Hermitian")
    w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if w.min() < -PSD_TOL:
        raise ValueError(f"density matrix has negative eigenvalue {w.min():.3e}")
    if abs(np.trace(rho).real - 1.0) > 1e-8:
        raise ValueError("density matrix does not have unit trace")
    return rho


def pad_density(rho_I: np.ndarray, D_eL: int, D_eR: int) -> PaddedDensity:
    rho = _check_density(rho_I)
    out = np.kron(np.kron(np.eye(D_eL) / D_eL, rho), np.eye(D_eR) / D_eR)
    return PaddedDensity(out, D_eL, D_eR)


def husimi_q(padded: PaddedDensity, psi: DenseState | np.ndarray) -> float:
    vec = psi.amplitudes if isinstance(psi, DenseState) else np.asarray(psi)
    if vec.size != padded.dim:
        raise DimensionError(f"segment state has {vec.size} entries, padded density is {padded.dim}")
    return float(np.real(np.vdot(vec, padded.rho_tilde @ vec)))


def husimi_volume(d: int, segment: Segment) -> float:
    return 1.0 / (d**segment.size * segment.D_eL * segment.D_eR)


def segment_profile(segment: Segment, d: int, D: int | None = None) -> list[int]:
    """Bond dimensions ``[D_eL, ..., D_eR]`` used when sampling segment MPS."""
    D = max(segment.D_eL, segment.D_eR) if D is None else D
    prof = [segment.D_eL]
    for _ in range(segment.size - 1):
        prof.append(min(D, d * prof[-1]))
    if segment.D_eR > d * prof[-1]:
        raise DimensionError("right edge dimension too large for the segment")
    prof.append(segment.D_eR)
    return prof


def _sample_raw(d: int, profile: Sequence[int], n: int, rng) -> np.ndarray:
    """Raw contraction of Haar left-canonical tensors, shape ``(n, D_first, d**k, D_last)``."""
    psi = None
    for dl, dr in zip(profile[:-1], profile[1:]):
        u = haar_unitary(d * dl, rng, size=(n,))
        a = u[:, :, :dr].reshape(n, d, dl, dr)
        if psi is None:
            psi = a.transpose(0, 2, 1, 3).reshape(n, dl * d, dr)
        else:
            psi = np.einsum("sxb,snbc->sxnc", psi, a).reshape(n, -1, dr)
    return psi.reshape(n, profile[0], -1, profile[-1])


def sample_segment_states(d: int, segment: Segment, n: int, rng, D: int | None = None) -> np.ndarray:
    """``n`` Haar-random segment MPS, shape ``(n, D_eL, d**k, D_eR)``, unit norm."""
    raw = _sample_raw(d, segment_profile(segment, d, D), n, rng)
    return raw / math.sqrt(segment.D_eR)


def _q_values(psi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    dl, dr = psi.shape[1], psi.shape[3]
    q = np.einsum("sapb,pq,saqb->s", psi.conj(), rho, psi, optimize=True).real / (dl * dr)
    return q


def _reduced(psi: np.ndarray) -> np.ndarray:
    return np.einsum("sapb,saqb->spq", psi, psi.conj(), optimize=True)


def _entropies(rhos: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(rhos)
    w = np.clip(w, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(w > 0, -w * np.log(np.where(w > 0, w, 1.0)), 0.0)
    return t.sum(axis=-1)


def _xlogx(q: np.ndarray) -> np.ndarray:
    return np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)


@dataclass(frozen=True)
class HusimiEstimate:
    value: float
    std_error: float
    samples: int
    seed: int
    functional: str


def _batch_sizes(samples: int, batches: int) -> list[int]:
    if samples < 1:
        raise ValueError("samples must be positive")
    batches = max(1, min(batches, samples))
    base, extra = divmod(samples, batches)
    return [base + (1 if b < extra else 0) for b in range(batches)]


def segment_density(state, segment: Segment, d: int | None = None) -> np.ndarray:
    """Reduced density matrix of the segment from a full-chain pure ``DenseState``,
    or the matrix itself if a density matrix is passed."""
    if isinstance(state, DenseState):
        N = len(state.dims)
        if segment.last >= N:
            raise DimensionError("segment extends past the chain")
        return reduced_density_matrix(state.amplitudes, state.dims, list(segment.sites))
    rho = np.asarray(state, dtype=complex)
    return _check_density(rho)


class _Sampler:
    """Runs a per-sample functional over batches and aggregates batch means."""

    def __init__(self, d: int, segment: Segment, samples: int, seed: int, batches: int, D: int | None):
        self.d, self.segment, self.samples, self.seed, self.D = d, segment, samples, seed, D
        self.sizes = _batch_sizes(samples, batches)
        self.seeds = spawn_seeds(seed, len(self.sizes))

    def batches(self):
        for size, ss in zip(self.sizes, self.seeds):
            yield sample_segment_states(self.d, self.segment, size, make_rng(ss), self.D)

    def scalar(self, fn) -> list[tuple[float, float, int]]:
        """Per-batch ``(sum, mean, size)`` of several per-sample value arrays returned by ``fn``."""
        out = []
        for psi in self.batches():
            vals = fn(psi)
            out.append([(math.fsum(v), v.size) for v in vals])
        return out


def _aggregate(per_batch, k: int, scale: float) -> tuple[float, float]:
    sums = [b[k][0] for b in per_batch]
    sizes = [b[k][1] for b in per_batch]
    n = sum(sizes)
    mean = math.fsum(sums) / n
    if len(per_batch) < 2:
        return scale * mean, float("inf")
    means = np.array([s / m for s, m in zip(sums, sizes)])
    err = float(np.std(means, ddof=1) / math.sqrt(len(means)))
    return scale * mean, scale * err


def _infer_d(rho: np.ndarray, segment: Segment) -> int:
    d = round(rho.shape[0] ** (1.0 / segment.size))
    if d**segment.size != rho.shape[0]:
        raise DimensionError("density matrix dimension is not d**|segment|")
    return d


def mc_normalization(state, segment: Segment, samples: int, seed: int, batches: int = 100, D: int | None = None) -> HusimiEstimate:
    """``(1/V) E[Q]``, which equals ``Tr rho = 1``."""
    rho = segment_density(state, segment)
    d = _infer_d(rho, segment)
    V = husimi_volume(d, segment)
    per = _Sampler(d, segment, samples, seed, batches, D).scalar(lambda psi: [_q_values(psi, rho)])
    val, err = _aggregate(per, 0, 1.0 / V)
    return HusimiEstimate(val, err, samples, seed, "normalization")


@dataclass(frozen=True)
class ChannelEstimate:
    value: np.ndarray
    std_error: np.ndarray
    samples: int
    seed: int

    @property
    def entropy(self) -> float:
        return von_neumann_entropy(0.5 * (self.value + self.value.conj().T))


def mc_channel_apply(state, segment: Segment, samples: int, seed: int, batches: int = 100, D: int | None = None) -> ChannelEstimate:
    """``(1/V) E[Q Tr_E(Psi Psi^dagger)]``: the measure-and-prepare channel applied to ``rho``."""
    rho = segment_density(state, segment)
    d = _infer_d(rho, segment)
    V = husimi_volume(d, segment)
    sampler = _Sampler(d, segment, samples, seed, batches, D)
    sums, sizes = [], []
    for psi in sampler.batches():
        q = _q_values(psi, rho)
        red = _reduced(psi)
        sums.append(np.einsum("s,spq->pq", q, red))
        sizes.append(len(q))
    sums = np.array(sums)
    sizes = np.array(sizes)
    mean = sums.sum(axis=0) / sizes.sum() / V
    means = sums / sizes[:, None, None] / V
    re = np.std(means.real, axis=0, ddof=1) / math.sqrt(len(sizes))
    im = np.std(means.imag, axis=0, ddof=1) / math.sqrt(len(sizes))
    return ChannelEstimate(mean, re + 1j * im, samples, seed)


@dataclass(frozen=True)
class EntropyBoundReport:
    exact_entropy: float
    mean_intrinsic: HusimiEstimate
    wehrl: HusimiEstimate
    bound: float
    bound_error: float
    slack: float
    normalization: HusimiEstimate
    log_edge_dims: float

    @property
    def slack_sigma(self) -> float:
        return self.slack / self.bound_error if self.bound_error > 0 else float("inf")


def entropy_bound_report(state, segment: Segment, samples: int, seed: int, batches: int = 100, D: int | None = None) -> EntropyBoundReport:
    """Both terms of the entropy bound ``S(rho) <= <S(rho(Psi))>_Q + S_W(Q)``."""
    rho = segment_density(state, segment)
    d = _infer_d(rho, segment)
    V = husimi_volume(d, segment)

    def fn(psi):
        q = _q_values(psi, rho)
        s = _entropies(_reduced(psi))
        return [q * s, -_xlogx(q), q * s - _xlogx(q), q]

    per = _Sampler(d, segment, samples, seed, batches, D).scalar(fn)
    mi, mi_err = _aggregate(per, 0, 1.0 / V)
    sw, sw_err = _aggregate(per, 1, 1.0 / V)
    bd, bd_err = _aggregate(per, 2, 1.0 / V)
    nm, nm_err = _aggregate(per, 3, 1.0 / V)
    exact = von_neumann_entropy(rho)
    return EntropyBoundReport(
        exact_entropy=exact,
        mean_intrinsic=HusimiEstimate(mi, mi_err, samples, seed, "mean_intrinsic_entropy"),
        wehrl=HusimiEstimate(sw, sw_err, samples, seed, "wehrl"),
        bound=bd,
        bound_error=bd_err,
        slack=bd - exact,
        normalization=HusimiEstimate(nm, nm_err, samples, seed, "normalization"),
        log_edge_dims=math.log(segment.D_eL * segment.D_eR),
    )


# ------------------------------------------------------------- marginals


@dataclass(frozen=True)
class MarginalReport:
    direct: np.ndarray
    marginal: np.ndarray
    std_errors: np.ndarray

    @property
    def max_sigma(self) -> float:
        diff = np.abs(self.direct - self.marginal)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.std_errors > 0, diff / self.std_errors, np.where(diff > 1e-12, np.inf, 0.0))
        return float(np.max(z))

    @property
    def max_abs_difference(self) -> float:
        return float(np.max(np.abs(self.direct - self.marginal)))


def _piece_profile(n_sites: int, left: int, right: int, d: int, D: int) -> list[int]:
    prof = [left]
    for k in range(1, n_sites):
        prof.append(min(D, d * prof[-1], right * d ** (n_sites - k)))
    prof.append(right)
    return prof


def marginal_check(
    state: DenseState,
    segment: Segment,
    outer_samples: int,
    inner_samples: int,
    seed: int,
    D: int | None = None,
    batches: int = 50,
) -> MarginalReport:
    """Compare ``Q_I(Psi_I)`` with the average of the full ``Q`` over complement MPS.

    ``outer_samples`` probe segment states are drawn. For each, complement pieces
    left and right of the segment are sampled and contracted with the probe's raw
    tensors over the edge ancillae; the full state is divided by ``D_eL D_eR``
    and the complement volume is ``1 / (d^|c| D_eL D_eR)``.
    """
    if not isinstance(state, DenseState):
        raise TypeError("marginal_check needs a full-chain DenseState")
    N = len(state.dims)
    d = state.dims[0]
    if N > 10:
        raise DimensionError("marginal_check is limited to N <= 10")
    if segment.last >= N:
        raise DimensionError("segment extends past the chain")
    if segment.first == 0 and segment.D_eL != 1 or segment.last == N - 1 and segment.D_eR != 1:
        raise DimensionError("edges at the chain boundary must have dimension 1")
    D = max(segment.D_eL, segment.D_eR, 1) if D is None else D
    rho_I = segment_density(state, segment)
    padded = pad_density(rho_I, segment.D_eL, segment.D_eR)
    n_left, n_right = segment.first, N - 1 - segment.last
    n_comp = n_left + n_right
    V_c = 1.0 / (d**n_comp * segment.D_eL * segment.D_eR)
    root = spawn_seeds(seed, 2)
    probe_rng = make_rng(root[0])
    probes = _sample_raw(d, segment_profile(segment, d, D), outer_samples, probe_rng)  # raw
    psi_full = state.amplitudes
    direct, marg, errs = [], [], []
    inner_seeds = root[1].spawn(outer_samples)
    for p in range(outer_samples):
        raw = probes[p]
        seg_state = (raw / math.sqrt(segment.D_eR)).reshape(-1)
        direct.append(husimi_q(padded, seg_state))
        if n_comp == 0:
            marg.append(float(abs(np.vdot(seg_state, psi_full)) ** 2))
            errs.append(0.0)
            continue
        sizes = _batch_sizes(inner_samples, batches)
        bseeds = inner_seeds[p].spawn(len(sizes))
        sums, counts = [], []
        for size, ss in zip(sizes, bseeds):
            rng = make_rng(ss)
            if n_left:
                left = _sample_raw(d, _piece_profile(n_left, 1, segment.D_eL, d, D), size, rng)[:, 0]
            else:
                left = np.ones((size, 1, 1))
            if n_right:
                right = _sample_raw(d, _piece_profile(n_right, segment.D_eR, 1, d, D), size, rng)[..., 0]
            else:
                right = np.ones((size, 1, 1))
            # left: (s, d^nl, D_eL); raw: (D_eL, d^k, D_eR); right: (s, D_eR, d^nr)
            phi = np.einsum("sxa,apb,sby->sxpy", left, raw, right, optimize=True).reshape(size, -1)
            phi = phi / (segment.D_eL * segment.D_eR)
            q = np.abs(phi.conj() @ psi_full) ** 2
            sums.append(math.fsum(q))
            counts.append(size)
        means = np.array(sums) / np.array(counts)
        marg.append(math.fsum(sums) / sum(counts) / V_c)
        errs.append(float(np.std(means, ddof=1) / math.sqrt(len(means)) / V_c))
    return MarginalReport(np.array(direct), np.array(marg), np.array(errs))


# ------------------------------------------------------------- dynamics


def q_time_derivative(rho: np.ndarray | DenseState, H: np.ndarray, probe: np.ndarray | DenseState) -> float:
    """``dQ/dt = -i Psi^dagger [H, rho] Psi`` for ``rho`` evolving under ``H``."""
    if isinstance(rho, DenseState):
        v = rho.amplitudes
        rho = np.outer(v, v.conj())
    vec = probe.amplitudes if isinstance(probe, DenseState) else np.asarray(probe)
    H = H.to_dense() if hasattr(H, "to_dense") else np.asarray(H)
    if not (rho.shape == H.shape and vec.size == H.shape[0]):
        raise DimensionError("state, Hamiltonian and probe dimensions differ")
    comm = H @ rho - rho @ H
    val = -1j * np.vdot(vec, comm @ vec)
    if abs(val.imag) > 1e-8:
        raise NumericalConsistencyError(f"imaginary residue {val.imag:.3e} in dQ/dt")
    return float(val.real)


def pure_density(psi: DenseState | np.ndarray) -> np.ndarray:
    v = psi.amplitudes if isinstance(psi, DenseState) else np.asarray(psi)
    return np.outer(v, v.conj())


__all__ = [
    "PaddedDensity",
    "HusimiEstimate",
    "ChannelEstimate",
    "EntropyBoundReport",
    "MarginalReport",
    "pad_density",
    "husimi_q",
    "husimi_volume",
    "segment_profile",
    "sample_segment_states",
    "segment_density",
    "mc_normalization",
    "mc_channel_apply",
    "entropy_bound_report",
    "marginal_check",
    "q_time_derivative",
    "pure_density",
    "entropy_from_probs",
]
