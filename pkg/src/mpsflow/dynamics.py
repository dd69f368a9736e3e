"""TDVP trajectories, exact evolution and the Lyapunov spectrum of the projected flow."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _contract as C
from ._rng import make_rng
from .errors import DimensionError, NumericalConsistencyError, ResourceError
from .hamiltonian import LocalHamiltonian
from .mps import (
    DENSE_CAP,
    DenseState,
    MpsChain,
    Segment,
    _right_envs,
    canonical_residuals,
    entropy_from_probs,
    left_canonicalize,
)
from .tangent import (
    ModeIndex,
    _b_from_block,
    _site_data,
    coords_from_vector,
    env_power,
    tangent_coordinates,
    thouless_sites,
)

STEP_RESIDUAL_TOL = 1e-8


# ------------------------------------------------------------------ exact


class ExactPropagator:
    """``exp(-iHt)`` from one dense eigendecomposition; reusable across times."""

    def __init__(self, H: LocalHamiltonian, cap: int = DENSE_CAP):
        if H.d**H.N > cap:
            raise ResourceError(f"dense dimension {H.d ** H.N} exceeds cap {cap}")
        self.H = H
        self.w, self.v = np.linalg.eigh(H.to_dense())

    def __call__(self, psi: np.ndarray, t: float) -> np.ndarray:
        return self.v @ (np.exp(-1j * self.w * t) * (self.v.conj().T @ psi))


def exact_evolve(state: DenseState, H: LocalHamiltonian, t: float, cap: int = DENSE_CAP) -> DenseState:
    if state.amplitudes.size != H.d**H.N:
        raise DimensionError("state and Hamiltonian dimensions differ")
    out = ExactPropagator(H, cap)(state.amplitudes, t)
    return DenseState(out, state.dims)


# ------------------------------------------------------------------ TDVP


def tdvp_vector_field(chain: MpsChain, H: LocalHamiltonian) -> list[np.ndarray]:
    """Velocity ``x_dot = -i <d_mu^{(i)} Psi| H |Psi>`` as coordinate tensors."""
    xdot = -1j * tangent_coordinates(chain, list(chain.sites), H.to_mpo())
    return coords_from_vector(chain, xdot)


def tdvp_velocity_vector(chain: MpsChain, H: LocalHamiltonian) -> np.ndarray:
    return -1j * tangent_coordinates(chain, list(chain.sites), H.to_mpo())


def tensor_velocity(sites: Sequence[np.ndarray], mpo) -> list[np.ndarray]:
    """Gauge-fixed site velocities ``-i (1 - A A^dagger) G Gamma^{-1}``; batched.

    ``G_i`` is the gradient of ``<Psi|H|Psi>`` with respect to the conjugated
    site tensor. This is the tangent vector with coordinates ``x_dot`` above,
    written in terms of the raw tensors.
    """
    envs = _right_envs(sites)
    grads = C.all_gradients(sites, sites, mpo)
    out = []
    for i, (a, g) in enumerate(zip(sites, grads)):
        *batch, d, dl, dr = a.shape
        am = a.reshape(*batch, d * dl, dr)
        gm = g.reshape(*batch, d * dl, dr)
        proj = gm - am @ (np.swapaxes(am.conj(), -1, -2) @ gm)
        ginv = env_power(envs[i + 1], -1.0)
        out.append((-1j * proj @ ginv).reshape(a.shape))
    return out


def rk4_step(sites: list[np.ndarray], mpo, dt: float) -> list[np.ndarray]:
    """One classical RK4 step followed by a QR re-canonicalization sweep."""

    def axpy(s, k, h):
        return [a + h * b for a, b in zip(s, k)]

    k1 = tensor_velocity(sites, mpo)
    k2 = tensor_velocity(axpy(sites, k1, dt / 2), mpo)
    k3 = tensor_velocity(axpy(sites, k2, dt / 2), mpo)
    k4 = tensor_velocity(axpy(sites, k3, dt), mpo)
    new = [a + (dt / 6) * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(sites, k1, k2, k3, k4)]
    new = left_canonicalize(new)
    res = max(canonical_residuals(new))
    if res > STEP_RESIDUAL_TOL:
        raise NumericalConsistencyError(f"step rejected: canonical residual {res:.2e} after repair")
    return new


@dataclass
class Trajectory:
    times: np.ndarray
    energies: np.ndarray
    entropies: np.ndarray  # (time, bond 1..N-1)
    chains: list = field(default_factory=list)

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energies - self.energies[0])))


def _bond_entropies(sites) -> np.ndarray:
    envs = _right_envs(sites)
    out = []
    for k in range(1, len(sites)):
        g = envs[k]
        w = np.linalg.eigvalsh(0.5 * (g + g.conj().T))
        out.append(entropy_from_probs(np.clip(w, 0, None)))
    return np.array(out)


def tdvp_evolve(
    chain0: MpsChain,
    H: LocalHamiltonian,
    t_final: float,
    dt: float,
    record_every: int = 1,
    keep_chains: bool = False,
) -> Trajectory:
    """Integrate the projected flow from ``chain0`` to ``t_final``.

    Site tensors are advanced with RK4 on the gauge-fixed tensor velocity and
    re-canonicalized after each step. Energies and bond entropies are recorded
    every ``record_every`` steps and at the final time.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if H.N != chain0.N or H.d != chain0.d:
        raise DimensionError("Hamiltonian and chain differ in size")
    mpo = H.to_mpo()
    nsteps = max(int(round(t_final / dt)), 0)
    if nsteps and abs(nsteps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be a multiple of dt")
    sites = list(chain0.sites)
    times, energies, ents, chains = [], [], [], []

    def record(step):
        times.append(step * dt)
        energies.append(float(np.real(C.expectation(sites, sites, mpo))))
        ents.append(_bond_entropies(sites))
        if keep_chains:
            chains.append(MpsChain(tuple(sites), check=False))

    record(0)
    for step in range(1, nsteps + 1):
        sites = rk4_step(sites, mpo, dt)
        if step % record_every == 0 or step == nsteps:
            record(step)
    traj = Trajectory(np.array(times), np.array(energies), np.array(ents).reshape(len(times), -1), chains)
    traj.final = MpsChain(tuple(sites))
    return traj


# ------------------------------------------------------------- Lyapunov


@dataclass
class LyapunovResult:
    """Lyapunov spectrum in real phase-space coordinates ``(Re x, Im x)``.

    ``frame0`` and ``frame`` are the initial and final orthonormal frames,
    ``log_r`` the accumulated ``log |R_mm|`` from the QR steps; together they
    define subsystem exponents via :func:`subsystem_exponent`.
    """

    exponents: np.ndarray
    ks_entropy: float
    t_total: float
    n_modes: int
    mode_index: ModeIndex
    frame0: np.ndarray
    frame: np.ndarray
    log_r: np.ndarray
    history_times: np.ndarray
    history: np.ndarray  # running exponent estimates, unsorted frame order
    converged: bool
    convergence_detail: dict
    subsystem_exponents: dict = field(default_factory=dict)
    volume_convention: str = "top min(2 n_I, n) frame directions, Gram determinant of the projection"

    @property
    def pairing_mismatch(self) -> float:
        e = self.exponents
        return float(np.max(np.abs(e + e[::-1]))) if e.size else 0.0

    @property
    def exponent_sum(self) -> float:
        return float(np.sum(self.exponents))


def _segment_coordinates(idx: ModeIndex, segment: Segment | None) -> np.ndarray:
    if segment is None:
        return np.zeros(0, int)
    modes = idx.segment_modes(segment.first, segment.last)
    return np.concatenate([modes, idx.total + modes])


def _log_volume(frame_cols: np.ndarray) -> float:
    g = frame_cols.T @ frame_cols
    sign, logdet = np.linalg.slogdet(g)
    if sign <= 0:
        return -np.inf
    return 0.5 * logdet


def subsystem_exponent(result: LyapunovResult, segment: Segment | None) -> float:
    """Growth rate of the projected volume of the top expanding frame directions.

    The volume is spanned by the first ``k = min(2 n_I, n)`` frame vectors, with
    ``n_I`` the number of complex modes in the segment and ``n`` the total. An
    empty (or mode-free) segment returns 0; the full chain returns the sum of the
    top ``n`` exponents, i.e. the KS entropy when those are all positive.
    """
    coords = _segment_coordinates(result.mode_index, segment)
    if coords.size == 0:
        return 0.0
    k = min(coords.size, result.n_modes)
    vt = _log_volume(result.frame[coords, :k])
    v0 = _log_volume(result.frame0[coords, :k])
    return float((np.sum(result.log_r[:k]) + vt - v0) / result.t_total)


def _perturbed_sites(chain: MpsChain, vecs: np.ndarray) -> list[np.ndarray]:
    """Thouless updates of ``chain`` along each row of ``vecs`` (complex mode vectors)."""
    idx = ModeIndex.of(chain)
    perps, isq = _site_data(chain)
    off = idx.offsets
    bs = []
    for i, a in enumerate(chain.sites):
        d, dl, dr = a.shape
        rows, cols = idx.shapes[i]
        block = vecs[:, off[i] : off[i + 1]].reshape(len(vecs), rows, cols)
        bs.append(_b_from_block(perps[i], block, isq[i], (d, dl, dr)))
    return thouless_sites(chain.sites, bs)


def lyapunov_spectrum(
    chain0: MpsChain,
    H: LocalHamiltonian,
    t_total: float,
    dt: float,
    qr_interval: int = 10,
    fd_step: float = 1e-5,
    seed=0,
    segments: Sequence[Segment] = (),
    tol_rel: float = 0.10,
    tol_abs: float = 0.01,
    warmup: float = 0.0,
) -> LyapunovResult:
    """Benettin estimate of the Lyapunov spectrum of the TDVP flow.

    A random orthonormal frame of ``2n`` real perturbations is carried along the
    trajectory. Every ``qr_interval`` steps each frame vector ``q`` is pushed
    through the flow map by central differences: the chains
    ``thouless_update(base, +-fd_step q)`` are evolved together with the base,
    their tangent coordinates at the new base are read off, and the difference
    quotient gives the linearized image ``J q``. The images are QR-decomposed and
    ``log |R_mm|`` accumulated.

    During the first ``warmup`` time units the frame is propagated and
    re-orthonormalized without accumulating, so that it aligns with the
    Lyapunov directions; ``t_total`` counts only the accumulation window.
    """
    if H.N != chain0.N or H.d != chain0.d:
        raise DimensionError("Hamiltonian and chain differ in size")
    if qr_interval < 1 or not dt > 0 or not fd_step > 0:
        raise ValueError("qr_interval, dt and fd_step must be positive")
    mpo = H.to_mpo()
    idx = ModeIndex.of(chain0)
    n = idx.total
    R = 2 * n
    steps_per = int(qr_interval)
    n_intervals = int(round(t_total / (dt * steps_per)))
    if n_intervals < 1:
        raise ValueError("t_total shorter than one QR interval")
    tau = dt * steps_per

    rng = make_rng(seed)
    frame0, r0 = np.linalg.qr(rng.standard_normal((R, R)))
    frame0 = frame0 * np.sign(np.diag(r0))

    def advance(base, frame):
        vecs = frame[:n].T + 1j * frame[n:].T  # (R, n)
        pert = _perturbed_sites(base, np.concatenate([fd_step * vecs, -fd_step * vecs]))
        sites = [np.concatenate([a[None], p]) for a, p in zip(base.sites, pert)]
        for _ in range(steps_per):
            sites = rk4_step(sites, mpo, dt)
        base = MpsChain(tuple(s[0] for s in sites))
        coords = tangent_coordinates(base, [s[1:] for s in sites])  # (2R, n)
        real = np.concatenate([coords.real, coords.imag], axis=1)
        images = (real[:R] - real[R:]).T / (2 * fd_step)
        q, r = np.linalg.qr(images)
        sgn = np.sign(np.diag(r))
        sgn[sgn == 0] = 1.0
        return base, q * sgn, np.log(np.abs(np.diag(r)))

    base = chain0
    for _ in range(int(round(warmup / tau))):
        base, frame0, _ = advance(base, frame0)
    frame = frame0.copy()
    log_r = np.zeros(R)
    hist_t, hist = [], []
    for it in range(n_intervals):
        base, frame, lr = advance(base, frame)
        log_r += lr
        hist_t.append((it + 1) * tau)
        hist.append(log_r / ((it + 1) * tau))
    t_run = n_intervals * tau
    exps = log_r / t_run
    order = np.argsort(-exps)
    exponents = exps[order]
    ks = float(np.sum(exponents[exponents > 0]))

    hist = np.array(hist)
    half = hist[len(hist) // 2 :]
    ks_run = np.array([np.sum(np.clip(h, 0, None)) for h in half])
    top_run = np.max(half, axis=1)

    def variation(x):
        final = abs(x[-1])
        spread = float(np.max(x) - np.min(x))
        return spread, spread <= max(tol_rel * final, tol_abs)

    ks_var, ks_ok = variation(ks_run)
    top_var, top_ok = variation(top_run)
    result = LyapunovResult(
        exponents=exponents,
        ks_entropy=ks,
        t_total=t_run,
        n_modes=n,
        mode_index=idx,
        frame0=frame0,
        frame=frame,
        log_r=log_r,
        history_times=np.array(hist_t),
        history=hist,
        converged=bool(ks_ok and top_ok),
        convergence_detail={"ks_spread": ks_var, "top_spread": top_var},
    )
    result.final_chain = base
    for seg in segments:
        result.subsystem_exponents[(seg.first, seg.last)] = subsystem_exponent(result, seg)
    return result


def full_segment(chain: MpsChain) -> Segment:
    return Segment.of_chain(chain, 0, chain.N - 1)

