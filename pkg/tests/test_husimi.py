import math

import numpy as np
import pytest

from mpsflow import dynamics as dy
from mpsflow import hamiltonian as ham
from mpsflow import husimi as hu
from mpsflow import mps
from mpsflow._rng import make_rng
from mpsflow.errors import DimensionError


def random_pure(N, seed, d=2):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d**N) + 1j * rng.standard_normal(d**N)
    return mps.DenseState(v / np.linalg.norm(v), (d,) * N)


def random_density(dim, rank, rng):
    z = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = z @ z.conj().T
    return rho / np.trace(rho).real


def test_q_is_nonnegative():
    rng = np.random.default_rng(0)
    seg = mps.Segment(1, 2, 2, 2)
    qs = []
    for k in range(100):
        rho = random_density(4, 1 + k % 4, rng)
        psi = hu.sample_segment_states(2, seg, 100, rng)
        qs.append(hu._q_values(psi, rho))
    assert np.concatenate(qs).size == 10_000
    assert np.concatenate(qs).min() >= -1e-12


def test_sampled_segment_states_are_normalized():
    seg = mps.Segment(0, 2, 2, 3)
    psi = hu.sample_segment_states(2, seg, 50, make_rng(1))
    assert psi.shape == (50, 2, 8, 3)
    np.testing.assert_allclose(np.linalg.norm(psi.reshape(50, -1), axis=1), 1, atol=1e-12)


def test_padded_q_agrees_with_sampler_values():
    rng = np.random.default_rng(2)
    seg = mps.Segment(0, 1, 2, 2)
    rho = random_density(4, 2, rng)
    psi = hu.sample_segment_states(2, seg, 5, rng)
    padded = hu.pad_density(rho, 2, 2)
    direct = [hu.husimi_q(padded, p.reshape(-1)) for p in psi]
    np.testing.assert_allclose(hu._q_values(psi, rho), direct, atol=1e-14)


def test_volume():
    assert hu.husimi_volume(2, mps.Segment(0, 2, 2, 3)) == pytest.approx(1 / 48)


def test_normalization_for_pure_state():
    chain = mps.random_mps(6, 2, 2, seed=3)
    est = hu.mc_normalization(mps.to_dense(chain), mps.Segment(2, 3, 2, 2), 100_000, seed=4)
    assert abs(est.value - 1) <= 3 * est.std_error


def test_normalization_for_maximally_mixed_state_is_exact():
    seg = mps.Segment(1, 2, 2, 2)
    mixed = hu.mc_normalization(np.eye(4) / 4, seg, 20_000, seed=5)
    pure = hu.mc_normalization(random_pure(4, 0), seg, 20_000, seed=5)
    assert mixed.value == pytest.approx(1, abs=1e-12)
    assert mixed.std_error < 1e-10 < pure.std_error


def test_channel_is_unital():
    seg = mps.Segment(1, 2, 2, 2)
    est = hu.mc_channel_apply(np.eye(4) / 4, seg, 100_000, seed=6)
    dev = np.abs(est.value - np.eye(4) / 4)
    err = np.abs(est.std_error.real) + np.abs(est.std_error.imag)
    assert np.all(dev <= 3 * err + 1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_channel_does_not_lower_entropy(seed):
    seg = mps.Segment(1, 2, 2, 2)
    state = random_pure(4, seed)
    rho = hu.segment_density(state, seg)
    est = hu.mc_channel_apply(state, seg, 10_000, seed=seed, batches=20)
    # first-order propagation of the entrywise errors into the entropy
    w, v = np.linalg.eigh(0.5 * (est.value + est.value.conj().T))
    grad = -(v * (np.log(np.clip(w, 1e-12, None)) + 1)) @ v.conj().T
    err = float(np.sum(np.abs(grad) * np.abs(est.std_error)))
    assert est.entropy >= mps.von_neumann_entropy(rho) - 3 * err


def test_entropy_bound_on_manifold_state():
    chain = mps.random_mps(6, 2, 2, seed=7)
    seg = mps.Segment.of_chain(chain, 2, 4)
    rep = hu.entropy_bound_report(mps.to_dense(chain), seg, 100_000, seed=8)
    assert rep.slack >= -3 * rep.bound_error


def test_entropy_bound_haar_state():
    rep = hu.entropy_bound_report(random_pure(6, 9), mps.Segment(1, 3, 2, 2), 100_000, seed=9)
    assert rep.slack >= -3 * rep.bound_error
    assert abs(rep.normalization.value - 1) <= 3 * rep.normalization.std_error


def test_wehrl_of_maximally_mixed_state():
    seg = mps.Segment(0, 1, 1, 2)
    rep = hu.entropy_bound_report(np.eye(4) / 4, seg, 5_000, seed=1)
    assert rep.wehrl.value == pytest.approx(-math.log(hu.husimi_volume(2, seg)), abs=1e-10)


@pytest.mark.slow
def test_marginal_equals_segment_q():
    chain = mps.random_mps(4, 2, 2, seed=10)
    rep = hu.marginal_check(mps.to_dense(chain), mps.Segment(1, 2, 2, 2), 5, 100_000, seed=11)
    assert rep.max_sigma <= 3.0


def test_marginal_small():
    chain = mps.random_mps(4, 2, 2, seed=12)
    rep = hu.marginal_check(mps.to_dense(chain), mps.Segment(1, 2, 2, 2), 3, 10_000, seed=13)
    assert rep.max_sigma <= 3.0


def test_q_time_derivative_matches_finite_difference():
    H = ham.chaotic_ising(4)
    state = random_pure(4, 14)
    probe = random_pure(4, 15).amplitudes
    prop = dy.ExactPropagator(H)

    def q(t):
        v = prop(state.amplitudes, t)
        return abs(np.vdot(probe, v)) ** 2

    exact = hu.q_time_derivative(state, H, probe)
    errs = []
    for h in (1e-2, 5e-3):
        errs.append(abs((q(h) - q(-h)) / (2 * h) - exact))
    assert errs[0] < 1e-3
    assert errs[1] < errs[0] / 3


def test_estimates_are_deterministic():
    seg = mps.Segment(1, 2, 2, 2)
    st = random_pure(4, 3)
    a = hu.entropy_bound_report(st, seg, 3_000, seed=21, batches=10)
    b = hu.entropy_bound_report(st, seg, 3_000, seed=21, batches=10)
    assert a == b


def test_input_validation():
    with pytest.raises(ValueError):
        hu.pad_density(np.diag([1.0, 1.0]), 1, 1)
    with pytest.raises(DimensionError):
        hu.mc_normalization(np.eye(8) / 8, mps.Segment(0, 1, 1, 1), 10, seed=0)
    with pytest.raises(DimensionError):
        hu.segment_profile(mps.Segment(0, 0, 1, 4), 2)
