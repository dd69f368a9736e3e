"""Quadratic bosonic model of pair excitations above a reference MPS.

The model Hamiltonian is

    H_B = E0 + sum_ab h_ab a_a^dag a_b + sum_{site(a) < site(b)} (Delta_ab a_a^dag a_b^dag + h.c.),

with ``h = epsilon - E0 * 1``. Gaussian states use real quadratures
``R = (x_1..x_n, p_1..p_n)`` with ``a = (x + i p) / sqrt(2)`` and covariance
``sigma_ij = <{R_i, R_j}> / 2``; the vacuum has ``sigma = I/2`` and symplectic
eigenvalues ``1/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import NumericalConsistencyError

SYMPLECTIC_TOL = 1e-6


@dataclass(frozen=True)
class QuadraticBosonModel:
    """``epsilon`` Hermitian (n x n); ``delta`` holds pair amplitudes for site(a) < site(b) only."""

    epsilon: np.ndarray
    delta: np.ndarray
    e0: float = 0.0
    mode_sites: tuple = field(default=(), compare=False)

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=complex)
        dl = np.asarray(self.delta, dtype=complex)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", dl)
        if eps.shape != dl.shape or eps.ndim != 2 or eps.shape[0] != eps.shape[1]:
            raise ValueError("epsilon and delta must be square matrices of equal size")
        if np.max(np.abs(eps - eps.conj().T), initial=0.0) > 1e-10:
            raise ValueError("epsilon is not Hermitian")

    @property
    def n(self) -> int:
        return self.epsilon.shape[0]

    @property
    def hopping(self) -> np.ndarray:
        return self.epsilon - self.e0 * np.eye(self.n)

    @property
    def pairing(self) -> np.ndarray:
        """Symmetric pairing matrix ``g`` with ``H_pair = (1/2) sum g_ab a_a^dag a_b^dag + h.c.``."""
        return self.delta + self.delta.T

    def dynamical_matrix(self) -> np.ndarray:
        """``M`` in ``d/dt (a, a^dag) = -i M (a, a^dag)``."""
        h, g = self.hopping, self.pairing
        return np.block([[h, g], [-g.conj(), -h.conj()]])

    def real_generator(self) -> np.ndarray:
        """Real ``K`` with ``dR/dt = K R``."""
        n = self.n
        eye = np.eye(n)
        w = np.block([[eye, 1j * eye], [eye, -1j * eye]]) / math.sqrt(2)
        k = np.linalg.solve(w, -1j * self.dynamical_matrix() @ w)
        if np.max(np.abs(k.imag), initial=0.0) > 1e-10:
            raise NumericalConsistencyError("real generator has an imaginary part")
        return k.real


def build_model(chain, H, dos=None, method: str = "contraction") -> QuadraticBosonModel:
    """Assemble hopping, pairing and vacuum energy from a reference chain."""
    from .tangent import ModeIndex, anomalous_delta, effective_epsilon, vacuum_energy

    idx = ModeIndex.of(chain)
    sites = tuple(idx.site_of(m) for m in range(idx.total))
    return QuadraticBosonModel(
        effective_epsilon(chain, H, method),
        anomalous_delta(chain, H, dos, method),
        vacuum_energy(chain, H),
        sites,
    )


def two_mode_squeezer(rate: float) -> QuadraticBosonModel:
    return QuadraticBosonModel(np.zeros((2, 2)), np.array([[0, rate], [0, 0]], complex), 0.0, (0, 1))


def random_model(n: int, seed, hopping_scale: float = 0.3, pairing_scale: float = 0.5) -> QuadraticBosonModel:
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    eps = hopping_scale * (z + z.conj().T) / 2
    p = pairing_scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2)
    return QuadraticBosonModel(eps, np.triu(p, 1), 0.0, tuple(range(n)))


def symplectic_form(n: int) -> np.ndarray:
    eye = np.eye(n)
    z = np.zeros((n, n))
    return np.block([[z, eye], [-eye, z]])


def vacuum(n: int) -> np.ndarray:
    return 0.5 * np.eye(2 * n)


def symplectic_matrix(model: QuadraticBosonModel, t: float) -> np.ndarray:
    s = sla.expm(t * model.real_generator())
    om = symplectic_form(model.n)
    err = float(np.max(np.abs(s.T @ om @ s - om))) / max(1.0, float(np.max(np.abs(s))) ** 2)
    if err > SYMPLECTIC_TOL:
        raise NumericalConsistencyError(f"evolution is not symplectic (relative error {err:.2e})")
    return s


@dataclass(frozen=True)
class CovarianceState:
    sigma: np.ndarray
    t: float = 0.0

    def uncertainty_violation(self) -> float:
        n = self.sigma.shape[0] // 2
        w = np.linalg.eigvalsh(self.sigma + 0.5j * symplectic_form(n))
        return float(max(0.0, -w.min()))


def evolve_covariance(model: QuadraticBosonModel, sigma0: np.ndarray, t: float) -> CovarianceState:
    s = symplectic_matrix(model, t)
    return CovarianceState(s @ sigma0 @ s.T, t)


def _subset_indices(n: int, modes: Sequence[int]) -> np.ndarray:
    modes = np.asarray(sorted(set(int(m) for m in modes)), int)
    if modes.size == 0:
        raise ValueError("mode subset must be non-empty")
    if modes.min() < 0 or modes.max() >= n:
        raise ValueError("mode index out of range")
    return np.concatenate([modes, n + modes])


def symplectic_eigenvalues(sigma: np.ndarray) -> np.ndarray:
    n = sigma.shape[0] // 2
    w = np.linalg.eigvals(1j * symplectic_form(n) @ sigma)
    nu = np.sort(np.abs(w.real))[::2]
    return nu


def gaussian_entropy(sigma: np.ndarray, mode_subset: Sequence[int] | None = None) -> float:
    n = sigma.shape[0] // 2
    if mode_subset is not None:
        idx = _subset_indices(n, mode_subset)
        sigma = sigma[np.ix_(idx, idx)]
    nu = symplectic_eigenvalues(sigma)
    if nu.min() < 0.5 - 1e-8:
        raise NumericalConsistencyError(f"symplectic eigenvalue {nu.min():.6f} below 1/2")
    total = 0.0
    for v in nu:
        plus, minus = v + 0.5, v - 0.5
        total += plus * math.log(plus)
        if minus > 1e-15:
            total -= minus * math.log(minus)
    return total


def _linear_fit(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if not np.all(np.isfinite(y)):
        raise NumericalConsistencyError("non-finite values in rate window; shorten the window")
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(slope), r2


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    r_squared: float
    linear: bool
    times: np.ndarray
    values: np.ndarray


def entropy_growth_rate(model: QuadraticBosonModel, mode_subset, t_window: float, points: int = 81) -> RateEstimate:
    """Slope of the subset entropy of the evolved vacuum over the second half of the window."""
    times = np.linspace(0.0, t_window, points)
    s0 = vacuum(model.n)
    vals = np.array([gaussian_entropy(evolve_covariance(model, s0, t).sigma, mode_subset) for t in times])
    sel = times >= t_window / 2
    slope, r2 = _linear_fit(times[sel], vals[sel])
    if float(np.ptp(vals[sel])) < 1e-12:
        slope, r2 = 0.0, 1.0
    return RateEstimate(slope, r2, r2 >= 0.99, times, vals)


def classical_subsystem_exponent(model: QuadraticBosonModel, mode_subset, t_total: float, points: int = 81) -> RateEstimate:
    """Growth rate of the projected phase-space volume under the linear flow.

    The unit cube spanned by the canonical frame is mapped by ``S(t)`` and
    projected onto the subset's quadratures; its log-volume is taken as
    ``(1/2) log det(P S S^T P^T)``, the Gram determinant of the projected
    image frame. The rate is the slope over the second half of the window.
    """
    idx = _subset_indices(model.n, mode_subset)
    times = np.linspace(0.0, t_total, points)
    vals = []
    for t in times:
        s = symplectic_matrix(model, t)
        ps = s[idx]
        sign, logdet = np.linalg.slogdet(ps @ ps.T)
        vals.append(0.5 * logdet)
    vals = np.array(vals)
    sel = times >= t_total / 2
    slope, r2 = _linear_fit(times[sel], vals[sel])
    if float(np.ptp(vals[sel])) < 1e-12:
        slope, r2 = 0.0, 1.0
    return RateEstimate(slope, r2, r2 >= 0.99, times, vals)


def pair_correlations(model: QuadraticBosonModel, t: float) -> np.ndarray:
    """``<a_i a_j>`` of the vacuum evolved for time ``t``."""
    n = model.n
    sig = evolve_covariance(model, vacuum(n), t).sigma
    xx, xp, pp = sig[:n, :n], sig[:n, n:], sig[n:, n:]
    # <a_i a_j> = (<x_i x_j> - <p_i p_j> + i<x_i p_j> + i<p_i x_j>) / 2 with symmetrized moments
    return 0.5 * (xx - pp + 1j * (xp + xp.T))


def evolve_alpha(model: QuadraticBosonModel, alpha0: np.ndarray, t: float, dt: float) -> np.ndarray:
    """RK4 for ``d alpha/dt = -i (h alpha + alpha h^T) - i g`` with symmetric pairing ``g``.

    ``alpha`` is kept as a full symmetric matrix over modes; its ``i < j`` part
    holds the pair amplitudes.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    h, g = model.hopping, model.pairing
    a = np.array(alpha0, dtype=complex)

    def rhs(x):
        return -1j * (h @ x + x @ h.T) - 1j * g

    steps = int(math.ceil(t / dt - 1e-12)) if t > 0 else 0
    step = t / steps if steps else 0.0
    for _ in range(steps):
        k1 = rhs(a)
        k2 = rhs(a + 0.5 * step * k1)
        k3 = rhs(a + 0.5 * step * k2)
        k4 = rhs(a + step * k3)
        a = a + (step / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return a


def delta_suppression_ratio(model_dos: QuadraticBosonModel, model_naive: QuadraticBosonModel) -> np.ndarray:
    """Elementwise ``Delta(dos) / Delta(rho = 1)`` on the non-zero pair entries."""
    mask = np.abs(model_naive.delta) > 0
    out = np.full(model_naive.delta.shape, np.nan, dtype=complex)
    out[mask] = model_dos.delta[mask] / model_naive.delta[mask]
    return out
