from fractions import Fraction

import numpy as np
import pytest

from mpsflow import haar
from mpsflow.errors import NumericalConsistencyError

PREF_22 = 864 / 2025
LAM_22 = 0.4


def test_transfer_matrix_closed_form():
    np.testing.assert_allclose(haar.transfer_matrix(2, 2), np.array([[14, 4], [2, 7]]) / 15, atol=1e-15)


def test_transfer_eigenvalues():
    w = np.sort(np.linalg.eigvals(haar.transfer_matrix(2, 2)).real)
    np.testing.assert_allclose(w, [0.4, 1.0], atol=1e-14)
    assert haar.subleading_eigenvalue(2, 2) == pytest.approx(6 / 15, abs=1e-15)


def test_projectors_closed_form():
    P, Q = haar.projectors(2, 2)
    np.testing.assert_allclose(P, np.array([[8, 4], [2, 1]]) / 9, atol=1e-15)
    np.testing.assert_allclose(Q, np.array([[1, -4], [-2, 8]]) / 9, atol=1e-15)
    np.testing.assert_allclose(P + 0.4 * Q, haar.transfer_matrix(2, 2), atol=1e-15)


def test_offdiagonal_prefactor():
    assert haar.offdiag_prefactor(2, 2) == pytest.approx(float(Fraction(16 * 9 * 2 * 3, 9 * 225)), abs=1e-15)
    assert haar.offdiag_prefactor(2, 2) == pytest.approx(PREF_22, abs=1e-15)


@pytest.mark.parametrize("d", range(2, 9))
@pytest.mark.parametrize("D", range(2, 9))
def test_spectral_identities(d, D):
    spectrum = haar.reduced_operators(d, D)
    assert max(spectrum.identity_errors().values()) <= 1e-12
    P, Q = haar.projectors(d, D)
    T = haar.transfer_matrix(d, D)
    lam = haar.subleading_eigenvalue(d, D)
    np.testing.assert_allclose(P + Q, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(P + lam * Q, T, atol=1e-12)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)


def test_literal_moments_at_d2_D2():
    I = haar.overlap_moments(2, 2, 6, "exact").I
    assert I[0, 0] == pytest.approx(16 / 5, abs=1e-12)
    assert I[0, 0] == pytest.approx(16 / 9 + 64 / 45, abs=1e-12)
    # power of lambda is max(y, j) - 1
    assert I[0, 1] == pytest.approx(PREF_22 * LAM_22, abs=1e-12)
    assert I[0, 2] == pytest.approx(PREF_22 * LAM_22**2, abs=1e-12)
    assert I[2, 4] == pytest.approx(PREF_22 * LAM_22**4, abs=1e-12)
    np.testing.assert_array_equal(I, I.T)


def test_large_bond_moments():
    d, D = 2, 2
    I = haar.overlap_moments(d, D, 5, "large_D").I
    for y in range(1, 6):
        assert I[y - 1, y - 1] == pytest.approx(1 + (d * d - 1) * D * D / (d**2 * d ** (y - 1)), abs=1e-14)
        for j in range(1, 6):
            if j != y:
                assert I[y - 1, j - 1] == pytest.approx(D * D * (d * d - 1) / d ** (max(y, j) + 3), abs=1e-14)


def test_reduced_moments_offdiagonal_law():
    for d, D in [(2, 2), (2, 3), (3, 2)]:
        I = haar.overlap_moments(d, D, 8, "reduced").I
        lam = haar.subleading_eigenvalue(d, D)
        pref = haar.offdiag_prefactor(d, D)
        for y in range(1, 9):
            for j in range(y + 1, 9):
                assert I[y - 1, j - 1] == pytest.approx(d * pref * lam ** (j - 2), rel=1e-12)
        np.testing.assert_allclose(I, I.T, atol=0)
        assert np.diag(I)[0] == pytest.approx(haar.overlap_moments(d, D, 2, "exact").I[0, 0], rel=1e-12)


def test_unknown_variant():
    with pytest.raises(ValueError):
        haar.overlap_moments(2, 2, 4, "bogus")


@pytest.mark.parametrize("D", [2, 3, 4])
def test_density_of_states_is_positive_and_converged(D):
    dos = haar.solve_density_of_states(haar.overlap_moments(2, D, 40))
    assert np.all(dos.rho > 0)
    assert dos.residual <= 1e-8
    assert dos.truncation_drift <= 0.01
    assert dos(1) == dos.rho[0]


@pytest.mark.parametrize("D", [2, 3])
def test_density_of_states_tail_decays_at_lambda(D):
    dos = haar.solve_density_of_states(haar.overlap_moments(2, D, 40))
    fit = haar.tail_fit(dos)
    assert abs(fit["ratio"] - 1) <= 0.10


@pytest.mark.parametrize("D", [2, 3, 4, 8])
def test_density_of_states_tail_has_linear_prefactor(D):
    dos = haar.solve_density_of_states(haar.overlap_moments(2, D, 60))
    lam = haar.subleading_eigenvalue(2, D)
    j = np.arange(15, 26)
    scaled = (dos.rho[j - 1] - dos.rho_inf) / (j * lam**j)
    # (rho - rho_inf) / (j lambda^j) levels off
    assert np.ptp(scaled) / scaled.mean() < 0.1
    assert abs(haar.tail_fit(dos, prefactor_power=1)["ratio"] - 1) <= 0.03


def test_density_of_states_frozen_values():
    # independent solve of the same truncated system in exact rational arithmetic
    dos = haar.solve_density_of_states(haar.overlap_moments(2, 2, 12))
    lam = Fraction(2, 5)
    pref = Fraction(864, 2025)
    n = 12
    diag0 = Fraction(16, 9)
    diag1 = Fraction(64, 45)
    I = [[pref * lam ** (max(y, j) - 1) if y != j else diag0 + lam ** (y - 1) * diag1 for j in range(1, n + 1)] for y in range(1, n + 1)]
    # Gaussian elimination on I x = 1
    A = [row[:] + [Fraction(1)] for row in I]
    for c in range(n):
        p = next(r for r in range(c, n) if A[r][c] != 0)
        A[c], A[p] = A[p], A[c]
        for r in range(n):
            if r != c and A[r][c] != 0:
                f = A[r][c] / A[c][c]
                A[r] = [a - f * b for a, b in zip(A[r], A[c])]
    inv = [A[r][n] / A[r][r] for r in range(n)]
    np.testing.assert_allclose(dos.rho, [float(1 / v) for v in inv], rtol=1e-12)


def test_diagonal_density_of_states():
    mom = haar.overlap_moments(2, 2, 10)
    np.testing.assert_array_equal(haar.diagonal_density_of_states(mom), np.diag(mom.I))


def test_singular_system_is_reported():
    with pytest.raises(NumericalConsistencyError):
        haar._solve(np.ones((3, 3)))


def test_mc_reduced_operators_match_closed_forms():
    rep = haar.mc_verify_reduced(2, 2, 100_000, seed=11)
    for name in ("transfer", "o1", "o2_summed"):
        assert rep.max_z(name) <= 3.0, name
    np.testing.assert_allclose(rep.closed_forms["transfer"], np.array([[14, 4], [2, 7]]) / 15, atol=1e-15)


def test_left_canonical_fixed_point_holds_per_sample():
    rep = haar.mc_verify_reduced(2, 3, 2_000, seed=3, batches=10)
    assert rep.fixed_point_max_error < 1e-12


@pytest.mark.slow
def test_double_derivative_reading_is_discriminated():
    rep = haar.mc_verify_reduced(2, 2, 1_000_000, seed=5)
    assert rep.candidate_z["reconstructed"] <= 3.0
    others = [v for k, v in rep.candidate_z.items() if k != "reconstructed"]
    assert min(others) >= 5.0


def test_mc_moments_follow_reduced_traces():
    rep = haar.mc_verify_moments(2, 2, 12, 1, 3, 40_000, seed=2)
    assert rep.z(rep.closed_reduced) <= 3.0 + rep.finite_size / rep.moment_err
    assert abs(rep.norm - 1) <= 3 * rep.norm_err + rep.finite_size


def test_mc_moments_do_not_depend_on_probed_mode():
    a = haar.mc_verify_moments(2, 2, 10, 1, 2, 20_000, seed=4, eta=0, delta=0)
    b = haar.mc_verify_moments(2, 2, 10, 1, 2, 20_000, seed=5, eta=1, delta=2)
    sigma = np.hypot(a.moment_err, b.moment_err)
    assert abs(a.moment - b.moment) <= 3 * sigma
