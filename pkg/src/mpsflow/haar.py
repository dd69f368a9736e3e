"""Haar-averaged transfer operators of random MPS and the pair density of states.

Averaged two-replica operators act on the span of two Bell-pair states of the
doubled bond space, ``|I>`` (identity pairing) and ``|S>`` (swap pairing), with
Gram matrix ``[[D^2, D], [D, D^2]]``. Operators are represented by the real
2x2 matrix of their action in that (non-orthogonal) basis: column ``k`` holds
the coordinates of the image of the ``k``-th basis vector.

Single-derivative tensors use ``B_mu = sqrt(D) A_perp E_mu``, i.e. the unit-mode
B tensor with the right environment replaced by its typical value ``1/D``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import haar_unitary, make_rng, spawn_seeds
from .errors import NumericalConsistencyError, ResourceError

SPECTRAL_TOL = 1e-12


# ------------------------------------------------------------ closed forms


def _check_dims(d: int, D: int) -> None:
    if d < 2 or D < 2:
        raise ValueError("reduced operators need d >= 2 and D >= 2")


def transfer_matrix(d: int, D: int) -> np.ndarray:
    c = d * d * D * D - 1
    return np.array([[d * (d * D * D - 1), d * D * (d - 1)], [D * (d - 1), d * D * D - 1]], float) / c


def single_derivative_matrix(d: int, D: int) -> np.ndarray:
    c = d * d * D * D - 1
    return np.outer([-d, d * D], [1, D]).astype(float) / c


def double_derivative_summed_matrix(d: int, D: int) -> np.ndarray:
    """Mode-summed two-derivative operator; the column vector is ``[dD, dD^2(d-1) - 1]``."""
    c = d * d * D * D - 1
    return D * np.outer([d * D, d * D * D * (d - 1) - 1], [1, D]).astype(float) / c


def double_derivative_candidates(d: int, D: int) -> dict[str, np.ndarray]:
    """Alternative readings of the two-derivative column vector, for discrimination by sampling."""
    c = d * d * D * D - 1
    row = np.array([1, D], float)
    cols = {
        "reconstructed": [d * D, d * D * D * (d - 1) - 1],
        "lower_only": [0, d * D * D * (d - 1) - 1],
        "swapped": [d * D * D * (d - 1) - 1, d * D],
        "split_minus_one": [d * D * D * (d - 1), -1],
    }
    return {k: D * np.outer(v, row) / c for k, v in cols.items()}


def projectors(d: int, D: int) -> tuple[np.ndarray, np.ndarray]:
    n = d * D * D + 1
    p = np.outer([d * D, 1], [D, 1]).astype(float) / n
    q = np.outer([-1, D], [-1, d * D]).astype(float) / n
    return p, q


def subleading_eigenvalue(d: int, D: int) -> float:
    return d * (D * D - 1) / (d * d * D * D - 1)


def offdiag_prefactor(d: int, D: int) -> float:
    c = d * d * D * D - 1
    return D**4 * (D * D - 1) ** 2 * d * (d * d - 1) / ((d * D * D + 1) * c**2)


@dataclass(frozen=True)
class ReducedOperator:
    m: np.ndarray
    d: int
    D: int
    name: str = ""


@dataclass(frozen=True)
class EnsembleSpectrum:
    d: int
    D: int
    transfer: ReducedOperator
    o1: ReducedOperator
    o2_summed: ReducedOperator
    P: np.ndarray
    Q_proj: np.ndarray
    lam: float
    xi: float

    def identity_errors(self) -> dict[str, float]:
        eye = np.eye(2)
        P, Q, T = self.P, self.Q_proj, self.transfer.m
        ev = np.sort(np.linalg.eigvals(T).real)
        return {
            "P+Q-I": float(np.max(np.abs(P + Q - eye))),
            "PP-P": float(np.max(np.abs(P @ P - P))),
            "QQ-Q": float(np.max(np.abs(Q @ Q - Q))),
            "PQ": float(np.max(np.abs(P @ Q))),
            "T-(P+lamQ)": float(np.max(np.abs(T - (P + self.lam * Q)))),
            "leading_eig-1": float(abs(ev[-1] - 1.0)),
            "subleading_eig-lam": float(abs(ev[0] - self.lam)),
        }


def reduced_operators(d: int, D: int) -> EnsembleSpectrum:
    _check_dims(d, D)
    p, q = projectors(d, D)
    lam = subleading_eigenvalue(d, D)
    spectrum = EnsembleSpectrum(
        d,
        D,
        ReducedOperator(transfer_matrix(d, D), d, D, "transfer"),
        ReducedOperator(single_derivative_matrix(d, D), d, D, "o1"),
        ReducedOperator(double_derivative_summed_matrix(d, D), d, D, "o2_summed"),
        p,
        q,
        lam,
        -1.0 / math.log(lam),
    )
    worst = max(spectrum.identity_errors().values())
    if worst > SPECTRAL_TOL:
        raise NumericalConsistencyError(f"spectral identities violated by {worst:.2e}")
    return spectrum


# ------------------------------------------------------------- moments

VARIANTS = ("exact", "large_D", "reduced")


@dataclass(frozen=True)
class OverlapMoments:
    """Mode-summed squared overlaps ``I[y-1, j-1]`` of second-tangent vectors."""

    I: np.ndarray
    d: int
    D: int
    variant: str

    @property
    def j_max(self) -> int:
        return self.I.shape[0]


def _reduced_moment(spectrum: EnsembleSpectrum, y: int, j: int) -> float:
    T, O1, O2, P = spectrum.transfer.m, spectrum.o1.m, spectrum.o2_summed.m, spectrum.P
    m = (spectrum.d - 1) * spectrum.D**2
    mp = np.linalg.matrix_power
    if y == j:
        return float(np.trace(O2 @ mp(T, y - 1) @ O2 @ P))
    y, j = min(y, j), max(y, j)
    return float(np.trace(O2 @ mp(T, y - 1) @ O1 @ mp(T, j - y - 1) @ (m * O1) @ P))


def overlap_moments(d: int, D: int, j_max: int, variant: str = "exact") -> OverlapMoments:
    """Moment matrix ``I_yj`` for ``1 <= y, j <= j_max``.

    ``exact``: the closed forms ``lam^(max(y,j)-1) * prefactor`` off the diagonal
    and the two-term diagonal. ``large_D``: their ``D -> infinity`` forms.
    ``reduced``: direct evaluation of the 2x2 reduced traces (an independent
    route; its off-diagonal entries differ from ``exact`` by ``d / lam``).
    """
    _check_dims(d, D)
    if j_max < 2:
        raise ValueError("j_max must be at least 2")
    y = np.arange(1, j_max + 1)
    Y, J = np.meshgrid(y, y, indexing="ij")
    mx = np.maximum(Y, J)
    lam = subleading_eigenvalue(d, D)
    if variant == "exact":
        I = offdiag_prefactor(d, D) * lam ** (mx - 1.0)
        n = d * D * D + 1
        c = d * d * D * D - 1
        diag = (D * D * (d + 1) / n) ** 2 + lam ** (y - 1.0) * d * (d + 1) * D**4 * (D * D - 1) / n * (1 / n - 1 / c)
        I[np.diag_indices(j_max)] = diag
    elif variant == "large_D":
        I = D * D * (d * d - 1) / d ** (mx + 3.0)
        I[np.diag_indices(j_max)] = 1 + (d * d - 1) * D * D / (d ** (y - 1.0) * d * d)
    elif variant == "reduced":
        spectrum = reduced_operators(d, D)
        I = np.empty((j_max, j_max))
        for a in range(1, j_max + 1):
            for b in range(a, j_max + 1):
                I[a - 1, b - 1] = I[b - 1, a - 1] = _reduced_moment(spectrum, a, b)
    else:
        raise ValueError(f"variant must be one of {VARIANTS}")
    return OverlapMoments(I, d, D, variant)


# ------------------------------------------------------- density of states


@dataclass(frozen=True)
class DensityOfStates:
    rho: np.ndarray
    j_max: int
    residual: float
    truncation_drift: float
    condition_number: float
    rho_inf: float
    variant: str
    d: int
    D: int
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, j: int) -> float:
        return float(self.rho[j - 1])


def _solve(I: np.ndarray) -> tuple[np.ndarray, float, float]:
    cond = float(np.linalg.cond(I))
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalConsistencyError(f"truncated moment matrix is singular (condition number {cond:.3e})")
    inv_rho = np.linalg.solve(I, np.ones(I.shape[0]))
    residual = float(np.max(np.abs(I @ inv_rho - 1.0)))
    return inv_rho, residual, cond


def solve_density_of_states(moments: OverlapMoments, j_max: int | None = None) -> DensityOfStates:
    """Solve ``sum_j I_yj / rho(j) = 1`` on the truncated index range.

    The solve is repeated at twice the truncation; ``truncation_drift`` is the
    largest relative change of ``rho(1..j_max/2)`` between the two.
    """
    j_max = moments.j_max if j_max is None else j_max
    I = moments.I[:j_max, :j_max] if j_max <= moments.j_max else overlap_moments(
        moments.d, moments.D, j_max, moments.variant
    ).I
    inv_rho, residual, cond = _solve(I)
    rho = 1.0 / inv_rho
    big = overlap_moments(moments.d, moments.D, 2 * j_max, moments.variant).I
    rho2 = 1.0 / _solve(big)[0]
    half = max(j_max // 2, 1)
    drift = float(np.max(np.abs(rho2[:half] - rho[:half]) / np.abs(rho[:half])))
    return DensityOfStates(
        rho=rho,
        j_max=j_max,
        residual=residual,
        truncation_drift=drift,
        condition_number=cond,
        rho_inf=float(rho[-1]),
        variant=moments.variant,
        d=moments.d,
        D=moments.D,
        diagnostics={"positive": bool(np.all(rho > 0)), "rho_inf_large_D": ((moments.d + 1) / moments.d) ** 2},
    )


def diagonal_density_of_states(moments: OverlapMoments) -> np.ndarray:
    """``rho(j) = I_jj``: the solution when off-diagonal overlaps are dropped."""
    return np.diag(moments.I).copy()


def tail_fit(dos: DensityOfStates, lo: int = 5, hi: int = 20, prefactor_power: int = 0) -> dict:
    """Linear fit of ``ln((rho(j) - rho_inf) / j**prefactor_power)`` over ``lo <= j <= hi``.

    With ``prefactor_power = 0`` this is the plain log-linear tail fit. The
    excess ``rho(j) - rho_inf`` of the truncated solve behaves like
    ``j * lambda**j``, so ``prefactor_power = 1`` removes the bias the linear
    prefactor puts on the fitted rate over short windows.
    """
    j = np.arange(1, dos.j_max + 1)
    sel = (j >= lo) & (j <= hi)
    excess = dos.rho[sel] - dos.rho_inf
    lam = subleading_eigenvalue(dos.d, dos.D)
    if np.any(excess <= 0):
        return {"slope": float("nan"), "ln_lambda": math.log(lam), "ratio": float("nan"), "amplitude": float("nan")}
    y = np.log(excess) - prefactor_power * np.log(j[sel])
    slope = float(np.polyfit(j[sel], y, 1)[0])
    return {
        "slope": slope,
        "ln_lambda": math.log(lam),
        "ratio": slope / math.log(lam),
        "amplitude": float(dos.rho[0] - dos.rho_inf),
    }


# ---------------------------------------------------------- Monte Carlo

_BASIS_NAMES = ("I", "S")


def _bell_basis(D: int) -> tuple[np.ndarray, np.ndarray]:
    eye = np.eye(D)
    ident = np.einsum("ab,cd->abcd", eye, eye)
    swap = np.einsum("ad,bc->abcd", eye, eye)
    return ident, swap


def _doubled_action(k1, l1, k2, l2, z):
    """Image of ``z`` under copy 1 ``X -> sum K1 X L1^dag`` and copy 2 likewise; batched."""
    return np.einsum("...nab,...mcd,bBdD,...nAB,...mCD->...aAcC", k1, k2, z, l1.conj(), l2.conj(), optimize=True)


def _coordinates(z: np.ndarray, D: int) -> np.ndarray:
    gram = np.array([[D * D, D], [D, D * D]], float)
    v = np.stack([np.einsum("...aacc->...", z), np.einsum("...acca->...", z)], axis=-1)
    return np.linalg.solve(gram, v[..., None].real)[..., 0]


def _sample_tensors(d: int, D: int, rng, size) -> tuple[np.ndarray, np.ndarray]:
    """Haar site tensors ``A`` and unit-mode tensors ``B`` (modes axis before ``(d, D, D)``)."""
    u = haar_unitary(d * D, rng, size=size)
    a = u[..., :, :D].reshape(*size, d, D, D)
    perp = u[..., :, D:]
    m = (d - 1) * D
    eye = np.eye(m * D).reshape(m * D, m, D)
    b = math.sqrt(D) * np.einsum("...rk,xkb->...xrb", perp, eye).reshape(*size, m * D, d, D, D)
    return a, b


def _batch_stats(values: np.ndarray, batches: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and batch-means standard error along axis 0."""
    n = values.shape[0]
    batches = max(2, min(batches, n))
    usable = (n // batches) * batches
    means = values[:usable].reshape(batches, -1, *values.shape[1:]).mean(axis=1)
    mean = values.mean(axis=0)
    err = means.std(axis=0, ddof=1) / math.sqrt(batches)
    return mean, err


@dataclass
class McReducedReport:
    d: int
    D: int
    samples: int
    seed: int
    estimates: dict
    std_errors: dict
    closed_forms: dict
    z_scores: dict
    fixed_point_max_error: float
    candidate_z: dict

    def max_z(self, name: str) -> float:
        return float(np.max(np.abs(self.z_scores[name])))


def mc_verify_reduced(d: int, D: int, samples: int, seed: int, batches: int = 100, chunk: int = 2000) -> McReducedReport:
    """Sampled reduced operators compared to the closed forms in standard-error units."""
    if D < 2:
        raise ValueError("the reduced Gram system is singular for D = 1")
    _check_dims(d, D)
    ident, swap = _bell_basis(D)
    rows = {"transfer": [], "o1": [], "o2_summed": []}
    fixed_err = 0.0
    seeds = spawn_seeds(seed, (samples + chunk - 1) // chunk)
    done = 0
    for ss in seeds:
        n = min(chunk, samples - done)
        done += n
        rng = make_rng(ss)
        a, b = _sample_tensors(d, D, rng, (n,))
        fixed = np.einsum("...nab,...nac->...bc", a.conj(), a)
        fixed_err = max(fixed_err, float(np.max(np.abs(fixed - np.eye(D)))))
        b0, b1 = b[:, 0], b[:, 1]
        for name, (k1, l1, k2, l2) in {
            "transfer": (a, a, a, a),
            "o1": (b0, a, a, b0),
        }.items():
            cols = [_coordinates(_doubled_action(k1, l1, k2, l2, z), D) for z in (ident, swap)]
            rows[name].append(np.stack(cols, axis=-1))
        acc = 0.0
        for mu in range(b.shape[1]):
            bm = b[:, mu]
            cols = [_coordinates(_doubled_action(bm, b1, b1, bm, z), D) for z in (ident, swap)]
            acc = acc + np.stack(cols, axis=-1)
        rows["o2_summed"].append(acc)
    closed = {
        "transfer": transfer_matrix(d, D),
        "o1": single_derivative_matrix(d, D),
        "o2_summed": double_derivative_summed_matrix(d, D),
    }
    est, err, z = {}, {}, {}
    for name, chunks in rows.items():
        vals = np.concatenate(chunks)
        est[name], err[name] = _batch_stats(vals, batches)
        z[name] = (est[name] - closed[name]) / np.where(err[name] > 0, err[name], np.inf)
    cand = {}
    for key, m in double_derivative_candidates(d, D).items():
        zz = (est["o2_summed"] - m) / np.where(err["o2_summed"] > 0, err["o2_summed"], np.inf)
        cand[key] = float(np.max(np.abs(zz)))
    return McReducedReport(d, D, samples, seed, est, err, closed, z, fixed_err, cand)


@dataclass
class McMomentReport:
    d: int
    D: int
    N: int
    y: int
    j: int
    eta: int
    delta: int
    samples: int
    seed: int
    moment: float
    moment_err: float
    norm: float
    norm_err: float
    closed_exact: float
    closed_reduced: float
    finite_size: float

    def z(self, reference: float) -> float:
        return abs(self.moment - reference) / self.moment_err if self.moment_err > 0 else float("inf")


def _transfer(k, l):
    *b, d, D1, D2 = k.shape
    return np.einsum("...nab,...ncd->...acbd", k, l.conj()).reshape(*b, D1 * D1, D2 * D2)


def mc_verify_moments(
    d: int,
    D: int,
    N: int,
    y: int,
    j: int,
    samples: int,
    seed: int,
    eta: int = 0,
    delta: int = 0,
    batches: int = 100,
    chunk: int = 500,
    max_dim: int = 4096,
) -> McMomentReport:
    """Sampled mode-summed squared overlaps on a periodic random MPS of length ``N``.

    The bra is the second-tangent vector with derivatives at sites ``0`` and
    ``y`` (modes ``eta``, ``delta``); the ket derivatives sit at ``0`` and ``j``
    and their modes are summed. The second-tangent norm of the bra is estimated
    alongside.
    """
    _check_dims(d, D)
    if not (1 <= y < N and 1 <= j < N):
        raise ValueError("need 1 <= y, j < N")
    if (D * D) ** 2 * N > max_dim * 64 or D * D > max_dim:
        raise ResourceError("periodic transfer matrices exceed the configured size")
    m = (d - 1) * D * D
    if not (0 <= eta < m and 0 <= delta < m):
        raise ValueError("mode index out of range")
    vals, norms = [], []
    done = 0
    for ss in spawn_seeds(seed, (samples + chunk - 1) // chunk):
        n = min(chunk, samples - done)
        done += n
        rng = make_rng(ss)
        a, b = _sample_tensors(d, D, rng, (n, N))  # a: (n,N,d,D,D), b: (n,N,m,d,D,D)
        ta = _transfer(a, a)  # (n, N, D2, D2)

        def prod(lo, hi):
            out = np.broadcast_to(np.eye(D * D), (n, D * D, D * D))
            for s in range(lo, hi):
                out = out @ ta[:, s]
            return out

        b0 = b[:, 0]
        first = _transfer(b0, b0[:, eta][:, None])  # (n, m, D2, D2): <bra eta| ket mu> at site 0
        nrm = np.einsum(
            "nab,nbc,ncd,nda->n",
            _transfer(b0[:, eta], b0[:, eta]),
            prod(1, y),
            _transfer(b[:, y, delta], b[:, y, delta]),
            prod(y + 1, N),
        )
        if y == j:
            mid = _transfer(b[:, y], b[:, y, delta][:, None])  # over ket mode nu
            amp = np.einsum("nmab,nbc,nvcd,nda->nmv", first, prod(1, y), mid, prod(y + 1, N))
        else:
            lo, hi = min(y, j), max(y, j)
            if y < j:
                op_lo = _transfer(a[:, y], b[:, y, delta])[:, None]  # bra derivative only
                op_hi = _transfer(b[:, j], a[:, j][:, None])  # ket derivative, modes nu
            else:
                op_lo = _transfer(b[:, j], a[:, j][:, None])
                op_hi = _transfer(a[:, y], b[:, y, delta])[:, None]
            amp = np.einsum(
                "nmab,nbc,nucd,nde,nvef,nfa->nmuv",
                first,
                prod(1, lo),
                op_lo,
                prod(lo + 1, hi),
                op_hi,
                prod(hi + 1, N),
                optimize=True,
            ).reshape(n, m, -1)
        vals.append(np.sum(np.abs(amp) ** 2, axis=(1, 2)))
        norms.append(nrm.real)
    vals = np.concatenate(vals)
    norms = np.concatenate(norms)
    mom, mom_err = _batch_stats(vals, batches)
    nr, nr_err = _batch_stats(norms, batches)
    lam = subleading_eigenvalue(d, D)
    ex = overlap_moments(d, D, max(y, j, 2), "exact").I[y - 1, j - 1]
    red = overlap_moments(d, D, max(y, j, 2), "reduced").I[y - 1, j - 1]
    return McMomentReport(
        d, D, N, y, j, eta, delta, samples, seed,
        float(mom), float(mom_err), float(nr), float(nr_err), float(ex), float(red),
        float(lam ** (N - max(y, j))),
    )
