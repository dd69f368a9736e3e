"""Acceptance criteria, one fixture per criterion.

Each fixture runs the criterion once at its stated size and tolerance and
records a single PASS/FAIL line in the terminal summary. Individual checks are
asserted by the tests below. Checks that the implementation does not meet are
marked ``xfail(strict=True)`` so that they are reported, never hidden, and turn
into errors if they start passing.
"""

import struct
import time
from dataclasses import dataclass, fields, is_dataclass

import numpy as np
import pytest

from mpsflow import bosonic as bo
from mpsflow import dynamics as dy
from mpsflow import haar
from mpsflow import hamiltonian as ham
from mpsflow import husimi as hu
from mpsflow import mps
from mpsflow import tangent as T
from mpsflow._rng import haar_unitary, make_rng


@dataclass
class Check:
    name: str
    ok: bool
    detail: str


class Criterion:
    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.checks = {}
        self.start = time.perf_counter()

    def add(self, name, ok, detail):
        self.checks[name] = Check(name, bool(ok), detail)

    def finish(self, report, note=""):
        elapsed = time.perf_counter() - self.start
        if self.budget is not None:
            self.add("runtime", elapsed < self.budget, f"{elapsed:.1f}s of {self.budget:.0f}s")
        ok = all(c.ok for c in self.checks.values())
        failed = [f"{c.name} ({c.detail})" for c in self.checks.values() if not c.ok]
        tail = "; failed: " + "; ".join(failed) if failed else ""
        line = f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}  {self.title}{tail}"
        if note:
            line += f"  [{note}]"
        report[self.number] = line
        print(line)
        return self

    def __getitem__(self, name):
        return self.checks[name]


def assert_check(crit, name):
    c = crit[name]
    assert c.ok, f"{name}: {c.detail}"


def body(obj) -> bytes:
    """Canonical byte encoding of a result object for determinism checks."""
    if isinstance(obj, np.ndarray):
        return str(obj.dtype).encode() + str(obj.shape).encode() + np.ascontiguousarray(obj).tobytes()
    if isinstance(obj, (bool, np.bool_)):
        return b"T" if obj else b"F"
    if isinstance(obj, (float, np.floating)):
        return struct.pack("<d", float(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj)).encode()
    if isinstance(obj, complex):
        return struct.pack("<dd", obj.real, obj.imag)
    if isinstance(obj, str):
        return obj.encode()
    if isinstance(obj, dict):
        return b"{" + b",".join(body(k) + b":" + body(v) for k, v in sorted(obj.items(), key=lambda kv: repr(kv[0]))) + b"}"
    if isinstance(obj, (list, tuple)):
        return b"[" + b",".join(body(v) for v in obj) + b"]"
    if is_dataclass(obj):
        return b"<" + b",".join(body(getattr(obj, f.name)) for f in fields(obj)) + b">"
    if obj is None:
        return b"None"
    raise TypeError(type(obj))


# --------------------------------------------------------- 1 canonical/geometry


@pytest.fixture(scope="module")
def c1(acceptance_report):
    crit = Criterion(1, "canonical form, cut entropies and tangent orthonormality", 60)
    rng = np.random.default_rng(2024)
    res, ent, orth = 0.0, 0.0, 0.0
    for k in range(20):
        N = 2 + k % 7
        D = 2 + k % 3
        chain = mps.random_mps(N, 2, D, seed=int(rng.integers(2**31)))
        res = max(res, max(mps.canonical_residuals(chain.sites)))
        psi = mps.to_dense(chain).amplitudes
        for b in range(1, N):
            s = np.linalg.svd(psi.reshape(2**b, -1), compute_uv=False) ** 2
            s = s[s > 1e-300]
            ent = max(ent, abs(mps.cut_entropy(chain, b) - float(-np.sum(s * np.log(s)))))
        basis = T.tangent_basis(chain)
        if basis.shape[1]:
            orth = max(orth, np.abs(basis.conj().T @ psi).max())
            orth = max(orth, np.abs(basis.conj().T @ basis - np.eye(basis.shape[1])).max())
    crit.add("canonical", res <= 1e-10, f"max residual {res:.2e}")
    crit.add("entropy", ent <= 1e-8, f"max deviation {ent:.2e}")
    crit.add("orthonormal", orth <= 1e-10, f"max deviation {orth:.2e}")
    return crit.finish(acceptance_report)


@pytest.mark.parametrize("name", ["canonical", "entropy", "orthonormal", "runtime"])
def test_c1_geometry(c1, name):
    assert_check(c1, name)


# --------------------------------------------------------- 2 Thouless update


@pytest.fixture(scope="module")
def c2(acceptance_report):
    crit = Criterion(2, "Thouless update is second-order close to the tangent vector", 60)
    ts = np.array([1e-2, 1e-3, 1e-4])
    orders = []
    for seed in range(5):
        chain = mps.random_mps(6, 2, 2 + seed % 2, seed=seed)
        rng = np.random.default_rng(100 + seed)
        n = T.ModeIndex.of(chain).total
        x = T.coords_from_vector(chain, rng.standard_normal(n) + 1j * rng.standard_normal(n))
        psi = mps.to_dense(chain).amplitudes
        lin = T.tangent_basis(chain) @ T.vector_from_coords(chain, x)
        errs = [
            np.linalg.norm(mps.to_dense(T.thouless_update(chain, [t * xi for xi in x])).amplitudes - psi - t * lin)
            for t in ts
        ]
        orders.extend(np.diff(np.log(errs)) / np.diff(np.log(ts)))
    orders = np.array(orders)
    crit.add("order", np.all((orders >= 1.8) & (orders <= 2.2)), f"orders in [{orders.min():.3f}, {orders.max():.3f}]")
    return crit.finish(acceptance_report)


@pytest.mark.parametrize("name", ["order", "runtime"])
def test_c2_thouless(c2, name):
    assert_check(c2, name)


# --------------------------------------------------------- 3 Husimi


HUSIMI_SEGMENT = mps.Segment(1, 3, 2, 2)


def husimi_states():
    H = ham.chaotic_ising(6)
    out = []
    for k in range(12):
        rng = make_rng(500 + k)
        kind = ("mps", "haar", "quench")[k % 3]
        if kind == "mps":
            st = mps.to_dense(mps.random_mps(6, 2, 2, rng))
        elif kind == "haar":
            v = rng.standard_normal(64) + 1j * rng.standard_normal(64)
            st = mps.DenseState(v / np.linalg.norm(v), (2,) * 6)
        else:
            local = haar_unitary(2, rng)[:, 0]
            st = dy.exact_evolve(mps.to_dense(mps.product_state([local] * 6)), H, 1.0)
        out.append((kind, st))
    return out


def husimi_runs():
    reports = [hu.entropy_bound_report(st, HUSIMI_SEGMENT, 100_000, seed=900 + k) for k, (_, st) in enumerate(husimi_states())]
    unital = hu.mc_channel_apply(np.eye(8) / 8, HUSIMI_SEGMENT, 100_000, seed=77)
    return reports, unital


@pytest.fixture(scope="module")
def c3_runs():
    return husimi_runs()


@pytest.fixture(scope="module")
def c3(c3_runs, acceptance_report):
    crit = Criterion(3, "Husimi normalization, channel unitality and entropy bound", 600)
    reports, unital = c3_runs
    zn = [abs(r.normalization.value - 1) / r.normalization.std_error for r in reports]
    crit.add("normalization", max(zn) <= 3, f"max |z| {max(zn):.2f} over {len(reports)} states")
    dev = np.abs(unital.value - np.eye(8) / 8)
    err = np.abs(unital.std_error.real) + np.abs(unital.std_error.imag)
    zu = float(np.max(dev / np.maximum(err, 1e-300)))
    crit.add("unital", np.all(dev <= 3 * err), f"max entrywise z {zu:.2f}")
    sig = [r.slack / r.bound_error for r in reports]
    crit.add("bound", len(reports) >= 10 and min(sig) >= -3, f"min slack {min(sig):.1f} sigma")
    return crit.finish(acceptance_report)


@pytest.mark.parametrize("name", ["normalization", "unital", "bound", "runtime"])
def test_c3_husimi(c3, name):
    assert_check(c3, name)


# --------------------------------------------------------- 4 TDVP oracle


@pytest.fixture(scope="module")
def c4(acceptance_report):
    crit = Criterion(4, "TDVP against exact evolution and energy conservation", 300)
    H = ham.chaotic_ising(8)
    chain = mps.random_mps(8, 2, mps.full_bond_profile(8, 2), seed=41)
    traj = dy.tdvp_evolve(chain, H, 1.0, 1e-3, record_every=1000)
    exact = dy.exact_evolve(mps.to_dense(chain), H, 1.0).amplitudes
    fid = abs(np.vdot(exact, mps.to_dense(traj.final).amplitudes)) ** 2
    crit.add("fidelity", fid >= 1 - 1e-6, f"1 - fidelity = {1 - fid:.2e}")
    small = dy.tdvp_evolve(mps.random_mps(8, 2, 2, seed=42), H, 10.0, 0.02, record_every=10)
    rel = small.energy_drift / H.norm()
    crit.add("energy", rel <= 1e-6, f"drift / |H| = {rel:.2e} at dt = 0.02")
    return crit.finish(acceptance_report)


@pytest.mark.parametrize("name", ["fidelity", "energy", "runtime"])
def test_c4_tdvp(c4, name):
    assert_check(c4, name)


# --------------------------------------------------------- 5 Lyapunov


LYAP = dict(t_total=200.0, dt=0.05, qr_interval=10, fd_step=1e-5, seed=0, warmup=20.0)


def lyapunov_runs():
    out = {}
    for name in ("chaotic_ising", "integrable_ising"):
        chain = mps.random_mps(6, 2, 2, seed=11)
        H = ham.preset(name, 6)
        out[name] = dy.lyapunov_spectrum(chain, H, segments=[dy.full_segment(chain)], **LYAP)
    return out


@pytest.fixture(scope="module")
def c5_runs():
    return lyapunov_runs()


@pytest.fixture(scope="module")
def c5(c5_runs, acceptance_report):
    crit = Criterion(5, "Lyapunov spectrum, subsystem exponent and KS entropy", 1800)
    r = c5_runs["chaotic_ising"]
    crit.add("sum", abs(r.exponent_sum) <= 0.02, f"sum {r.exponent_sum:.2e}")
    crit.add("pairing", r.pairing_mismatch <= 0.02, f"mismatch {r.pairing_mismatch:.4f}")
    full = next(iter(r.subsystem_exponents.values()))
    rel = abs(full - r.ks_entropy) / r.ks_entropy
    crit.add("ks", rel <= 0.02, f"full {full:.5f} vs KS {r.ks_entropy:.5f}")
    top = float(c5_runs["integrable_ising"].exponents[0])
    crit.add("integrable", top <= 0.02, f"largest integrable exponent {top:.4f}")
    return crit.finish(acceptance_report)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["sum", "pairing", "ks", "runtime"])
def test_c5_lyapunov(c5, name):
    assert_check(c5, name)


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="the D = 2 projected flow of the integrable chain is itself chaotic; its largest exponent is about 0.34",
)
def test_c5_integrable_exponent_vanishes(c5):
    assert_check(c5, "integrable")


# --------------------------------------------------------- 6 closed forms


@pytest.fixture(scope="module")
def c6(acceptance_report):
    crit = Criterion(6, "Haar-ensemble closed forms and spectral identities", 1)
    T22 = haar.transfer_matrix(2, 2)
    e1 = np.abs(T22 - np.array([[14, 4], [2, 7]]) / 15).max()
    e2 = abs(haar.subleading_eigenvalue(2, 2) - 0.4)
    e3 = abs(haar.overlap_moments(2, 2, 4).I[0, 0] - 3.2)
    e4 = abs(haar.offdiag_prefactor(2, 2) - 864 / 2025)
    crit.add("d2D2", max(e1, e2, e3, e4) <= 1e-12, f"max deviation {max(e1, e2, e3, e4):.1e}")
    worst = 0.0
    for d in range(2, 9):
        for D in range(2, 9):
            P, Q = haar.projectors(d, D)
            lam = haar.subleading_eigenvalue(d, D)
            worst = max(worst, np.abs(P + Q - np.eye(2)).max(), np.abs(P + lam * Q - haar.transfer_matrix(d, D)).max())
    crit.add("identities", worst <= 1e-12, f"max deviation {worst:.1e}")
    return crit.finish(acceptance_report)


@pytest.mark.parametrize("name", ["d2D2", "identities", "runtime"])
def test_c6_closed_forms(c6, name):
    assert_check(c6, name)


# --------------------------------------------------------- 7 Monte Carlo


def haar_mc_runs():
    red = haar.mc_verify_reduced(2, 2, 100_000, seed=19)
    mom = haar.mc_verify_moments(2, 2, 12, 1, 3, 100_000, seed=23)
    return red, mom


@pytest.fixture(scope="module")
def c7_runs():
    return haar_mc_runs()


@pytest.fixture(scope="module")
def c7(c7_runs, acceptance_report):
    crit = Criterion(7, "Haar Monte Carlo against the closed forms", 600)
    red, mom = c7_runs
    crit.add("transfer", red.max_z("transfer") <= 3, f"max z {red.max_z('transfer'):.2f}")
    allowed = 3 * mom.moment_err + mom.finite_size
    dev = abs(mom.moment - mom.closed_exact)
    crit.add(
        "moment",
        dev <= allowed,
        f"I_13 MC {mom.moment:.5f} +- {mom.moment_err:.5f} vs closed form {mom.closed_exact:.5f}"
        f" (reduced-trace value {mom.closed_reduced:.5f})",
    )
    zn = abs(mom.norm - 1) / mom.norm_err
    crit.add("norm", zn <= 3, f"norm {mom.norm:.5f}, z {zn:.2f}")
    return crit.finish(acceptance_report)


@pytest.mark.parametrize("name", ["transfer", "norm", "runtime"])
def test_c7_monte_carlo(c7, name):
    assert_check(c7, name)


@pytest.mark.xfail(
    strict=True,
    reason="sampling gives d * prefactor * lambda^(j-2) for the off-diagonal moment, five times the closed-form value",
)
def test_c7_moment_matches_closed_form(c7):
    assert_check(c7, "moment")


def test_c7_moment_matches_reduced_traces(c7_runs):
    _, mom = c7_runs
    assert abs(mom.moment - mom.closed_reduced) <= 3 * mom.moment_err + mom.finite_size


# --------------------------------------------------------- 8 density of states


DOS_D = (2, 4, 8)


@pytest.fixture(scope="module")
def c8(acceptance_report):
    crit = Criterion(8, "density of states solve, tail rate and amplitude scaling", 60)
    amps = {}
    for D in DOS_D:
        dos = haar.solve_density_of_states(haar.overlap_moments(2, D, 40))
        crit.add(f"residual_D{D}", dos.residual <= 1e-8, f"residual {dos.residual:.1e}")
        crit.add(f"drift_D{D}", dos.truncation_drift <= 0.01, f"drift {dos.truncation_drift:.1e}")
        fit = haar.tail_fit(haar.solve_density_of_states(haar.overlap_moments(2, D, 60)))
        crit.add(f"tail_D{D}", abs(fit["ratio"] - 1) <= 0.10, f"D={D} fitted/ln(lambda) = {fit['ratio']:.4f}")
        amps[D] = dos(1) - dos.rho_inf
    scal = {D: (amps[D] / amps[2]) / (D / 2) ** 2 for D in DOS_D}
    worst = max(abs(v - 1) for v in scal.values())
    crit.add(
        "amplitude",
        worst <= 0.20,
        "rho(1) - rho_inf relative to D^2 scaling: " + ", ".join(f"D={D}: {v:.3f}" for D, v in scal.items()),
    )
    return crit.finish(acceptance_report)


@pytest.mark.parametrize(
    "name",
    [f"{k}_D{D}" for k in ("residual", "drift") for D in DOS_D] + ["tail_D2", "runtime"],
)
def test_c8_density_of_states(c8, name):
    assert_check(c8, name)


@pytest.mark.xfail(
    strict=True,
    reason="the excess decays as j * lambda^j; a pure exponential fit over j in [5, 20] is about 10.2% shallow",
)
@pytest.mark.parametrize("D", [4, 8])
def test_c8_tail_rate_large_bond(c8, D):
    assert_check(c8, f"tail_D{D}")


@pytest.mark.xfail(strict=True, reason="rho(1) - rho_inf grows roughly as D^3 over D = 2, 4, 8, not D^2")
def test_c8_amplitude_scales_as_bond_squared(c8):
    assert_check(c8, "amplitude")


# --------------------------------------------------------- 9 bosonic


def bosonic_runs():
    out = []
    for seed in range(10):
        m = bo.random_model(4, seed)
        out.append((bo.entropy_growth_rate(m, [0, 1], 12.0), bo.classical_subsystem_exponent(m, [0, 1], 12.0)))
    return out


@pytest.fixture(scope="module")
def c9_runs():
    return bosonic_runs()


@pytest.fixture(scope="module")
def c9(c9_runs, acceptance_report):
    crit = Criterion(9, "two-mode squeezer and the entropy rate identity", 300)
    lam = 0.5
    sq = bo.two_mode_squeezer(lam)
    nu_err = 0.0
    for t in np.linspace(0, 10, 21):
        sig = bo.evolve_covariance(sq, bo.vacuum(2), t).sigma
        nu = bo.symplectic_eigenvalues(sig[np.ix_([0, 2], [0, 2])])[0]
        # vacuum nu is 1/2 with these quadratures
        nu_err = max(nu_err, abs(2 * nu - np.cosh(2 * lam * t)) / np.cosh(2 * lam * t))
    crit.add("squeezer_nu", nu_err <= 1e-10, f"relative deviation {nu_err:.1e}")
    rate = bo.entropy_growth_rate(sq, [0], 20.0).rate
    crit.add("squeezer_rate", abs(rate - 2 * lam) <= 0.02 * 2 * lam, f"rate {rate:.5f} vs {2 * lam}")
    rel = [abs(e.rate - c.rate) / abs(c.rate) for e, c in c9_runs]
    crit.add("identity", max(rel) <= 0.05, f"max relative difference {max(rel):.4f} over 10 models")
    worst = 0.0
    for seed in range(10):
        m = bo.random_model(4, seed)
        om = bo.symplectic_form(4)
        for t in np.linspace(0, 12.0, 81):
            s = bo.symplectic_matrix(m, t)
            worst = max(worst, np.abs(s.T @ om @ s - om).max() / max(1.0, np.abs(s).max() ** 2))
    crit.add("symplectic", worst <= 1e-8, f"max relative error {worst:.1e}")
    return crit.finish(acceptance_report)


@pytest.mark.parametrize("name", ["squeezer_nu", "squeezer_rate", "identity", "symplectic", "runtime"])
def test_c9_bosonic(c9, name):
    assert_check(c9, name)


# --------------------------------------------------------- 10 Delta bookkeeping


@pytest.fixture(scope="module")
def c10(acceptance_report):
    crit = Criterion(10, "pair couplings divided by the density of states", None)
    chain = mps.random_mps(6, 2, 2, seed=4)
    H = ham.chaotic_ising(6)
    dos = haar.solve_density_of_states(haar.overlap_moments(2, 2, 10))
    naive = bo.build_model(chain, H)
    weighted = bo.build_model(chain, H, dos=dos)
    ratio = bo.delta_suppression_ratio(weighted, naive)
    sites = np.array(naive.mode_sites)
    worst = 0.0
    for a, b in zip(*np.nonzero(np.isfinite(ratio))):
        expect = 1.0 / dos(int(sites[b] - sites[a]))
        worst = max(worst, abs(ratio[a, b] - expect) / expect)
    crit.add("ratio", worst <= 1e-12, f"max relative deviation {worst:.1e}")
    half = [k for k, s in enumerate(naive.mode_sites) if s < 3]
    rates = {name: bo.classical_subsystem_exponent(m, half, 1.0).rate for name, m in (("naive", naive), ("dos", weighted))}
    note = (
        f"exploratory, no gate: rate(rho=1) {rates['naive']:.3f}, rate(dos) {rates['dos']:.3f}, "
        f"ratio {rates['naive'] / rates['dos']:.3f}, rho(1) {dos(1):.4f}, D^2 = 4"
    )
    return crit.finish(acceptance_report, note)


def test_c10_delta_ratio(c10):
    assert_check(c10, "ratio")


# --------------------------------------------------------- 11 determinism


@pytest.fixture(scope="module")
def c11(c3_runs, c5_runs, c7_runs, c9_runs, acceptance_report):
    crit = Criterion(11, "stochastic runs are byte-identical under the same seed", None)
    crit.add("husimi", body(husimi_runs()) == body(c3_runs), "criterion 3 rerun")
    crit.add("haar", body(haar_mc_runs()) == body(c7_runs), "criterion 7 rerun")
    crit.add("bosonic", body(bosonic_runs()) == body(c9_runs), "criterion 9 rerun")
    again = lyapunov_runs()
    same = all(
        body((r.exponents, r.log_r, r.frame, r.subsystem_exponents)) == body((s.exponents, s.log_r, s.frame, s.subsystem_exponents))
        for r, s in zip(again.values(), c5_runs.values())
    )
    crit.add("lyapunov", same, "criterion 5 rerun")
    return crit.finish(acceptance_report)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["husimi", "haar", "bosonic", "lyapunov"])
def test_c11_determinism(c11, name):
    assert_check(c11, name)
