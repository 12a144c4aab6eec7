import math

import numpy as np
import pytest
from scipy import signal

from spinnoise import analytics, dynamics, model, noise
from spinnoise.errors import IntegrationError, NumericalError, SingularSteadyStateError
from spinnoise.noise import NoiseSpec

DT = dynamics.DEFAULT_DT


def test_reconstruction(ref_eig, ref_parts):
    assert dynamics.reconstruction_error(ref_eig, ref_parts) <= 1e-10


def test_spectrum_dissipative(ref_eig):
    assert np.all(ref_eig.lambda_diag.real <= 1e-6)


def test_beta_essentially_imaginary(ref_eig):
    assert np.max(np.abs(ref_eig.beta.real)) < 1e-2 * np.max(np.abs(ref_eig.beta.imag))


def test_beta_matches_finite_difference(ref, ref_eig):
    fd = dynamics.beta_finite_difference(ref, 1e-4 * ref.omega_larmor)
    assert np.max(np.abs(fd - ref_eig.beta)) <= 1e-6 * np.max(np.abs(ref_eig.beta))


def test_finite_difference_is_second_order(ref, ref_eig):
    errs = [
        np.max(np.abs(dynamics.beta_finite_difference(ref, f * ref.omega_larmor) - ref_eig.beta))
        for f in (4e-2, 2e-2)
    ]
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_finite_difference_rejects_bad_step(ref):
    with pytest.raises(ValueError):
        dynamics.beta_finite_difference(ref, 0.0)


def test_beta_without_light_is_larmor_ladder():
    p = model.ModelParams.reference(omega_rabi=0.0)
    eig = dynamics.eigendecompose(model.assemble_liouvillian(p))
    assert np.allclose(eig.beta.real, 0.0, atol=1e-9)
    assert np.allclose(eig.beta.imag, np.round(eig.beta.imag), atol=1e-9)
    assert set(np.round(eig.beta.imag).astype(int)) <= {-2, -1, 0, 1, 2}


def test_eta_tilde(ref_eig, ref_parts):
    assert np.allclose(ref_eig.p @ ref_eig.eta_tilde, ref_parts.eta, rtol=0, atol=1e-10 * ref_parts.eta.max())


def test_steady_state_residual(ref_parts, ref_sigma):
    assert np.linalg.norm(ref_parts.l_bar @ ref_sigma + ref_parts.eta) <= 1e-10 * np.linalg.norm(ref_parts.eta)


def test_steady_state_without_light():
    parts = model.assemble_liouvillian(model.ModelParams.reference(omega_rabi=0.0))
    sigma = dynamics.steady_state(parts)
    assert np.allclose(sigma, model.thermal_state(), atol=1e-14)


def test_closed_system_has_no_unique_steady_state():
    parts = model.assemble_liouvillian(model.ModelParams.reference(gamma_t=0.0))
    with pytest.raises(SingularSteadyStateError) as info:
        dynamics.steady_state(parts)
    assert info.value.stage == "steady_state"
    assert isinstance(info.value, NumericalError)


def test_steady_state_is_physical(ref_sigma):
    rho = model.devectorize(ref_sigma)
    assert np.allclose(rho, rho.conj().T, atol=1e-14)
    assert np.all(np.diag(rho).real > -1e-12)


def quiet(n):
    return noise.NoiseTrace(DT, np.zeros(n), NoiseSpec(0.0, 1e-9))


def test_zero_noise_fixed_point(ref_eig, ref_sigma):
    cfg = dynamics.TrajectoryConfig(n_steps=20000, record_every=100)
    out = dynamics.integrate(ref_eig, quiet(20000), cfg, ref_sigma, readout=np.eye(16))
    assert np.max(np.abs(out.records - ref_sigma[None, :])) < 1e-8


def test_zero_noise_relaxes_to_steady_state(ref_eig, ref_sigma):
    t = 40.0 / ref_eig.slowest_rate()
    n = int(t / DT)
    cfg = dynamics.TrajectoryConfig(n_steps=1, n_burn_in=n)
    out = dynamics.integrate(ref_eig, quiet(n + 1), cfg, model.thermal_state(), readout=np.eye(16))
    assert np.max(np.abs(out.records[-1] - ref_sigma)) < 1e-8


def test_boxcar_recording(ref_eig, ref_sigma):
    tr = noise.generate_ou(NoiseSpec(0.12 * 2 * math.pi * 3e6, 5.3e-9, seed=2), DT, 4000)
    fine = dynamics.integrate(ref_eig, tr, dynamics.TrajectoryConfig(n_steps=4000), ref_sigma)
    coarse = dynamics.integrate(ref_eig, tr, dynamics.TrajectoryConfig(n_steps=4000, record_every=8), ref_sigma)
    assert coarse.records.shape == (500, 8)
    assert np.allclose(coarse.records, fine.records.reshape(500, 8, 8).mean(axis=1), rtol=1e-12, atol=1e-15)
    assert coarse.dt == pytest.approx(8 * DT)
    assert np.array_equal(coarse["lambda1"], coarse.records[:, 0])


def test_integration_is_deterministic(ref_eig, ref_sigma):
    tr = noise.generate_ou(NoiseSpec(1e7, 5.3e-9, seed=1), DT, 3000)
    cfg = dynamics.TrajectoryConfig(n_steps=3000, record_every=10)
    a = dynamics.integrate(ref_eig, tr, cfg, ref_sigma, coupling="full")
    b = dynamics.integrate(ref_eig, tr, cfg, ref_sigma, coupling="full")
    assert np.array_equal(a.records, b.records)


def test_overflow_reports_step(ref_eig, ref_sigma):
    x = np.zeros(100)
    x[37] = 1e300
    tr = noise.NoiseTrace(DT, x, NoiseSpec(1.0, 1e-9))
    with pytest.raises(IntegrationError) as info:
        dynamics.integrate(ref_eig, tr, dynamics.TrajectoryConfig(n_steps=100), ref_sigma)
    assert info.value.step == 37
    assert info.value.stage == "integrate"
    assert "step 37" in str(info.value)


def test_integrate_input_checks(ref_eig, ref_sigma):
    cfg = dynamics.TrajectoryConfig(n_steps=100)
    with pytest.raises(ValueError):
        dynamics.integrate(ref_eig, quiet(50), cfg, ref_sigma)
    wrong_dt = noise.NoiseTrace(2 * DT, np.zeros(100), NoiseSpec(0.0, 1e-9))
    with pytest.raises(ValueError):
        dynamics.integrate(ref_eig, wrong_dt, cfg, ref_sigma)
    with pytest.raises(ValueError):
        dynamics.integrate(ref_eig, quiet(100), cfg, ref_sigma, coupling="partial")


@pytest.mark.parametrize(
    "kwargs", [{"n_steps": 0}, {"n_steps": 10, "dt": 0.0}, {"n_steps": 10, "n_burn_in": -1},
               {"n_steps": 10, "record_every": 11}, {"n_steps": 10, "n_realizations": 0}]
)
def test_trajectory_config_validation(kwargs):
    with pytest.raises(ValueError):
        dynamics.TrajectoryConfig(**kwargs)


def test_recommended_burn_in(ref, ref_eig):
    assert ref_eig.slowest_rate() == pytest.approx(ref.gamma_t, rel=0.2)
    assert dynamics.recommended_burn_in(ref_eig, DT) == math.ceil(5 / ref_eig.slowest_rate() / DT)


def test_trajectory_csv(tmp_path, ref_eig, ref_sigma):
    cfg = dynamics.TrajectoryConfig(n_steps=10, record_every=5)
    out = dynamics.integrate(ref_eig, quiet(10), cfg, ref_sigma)
    path = tmp_path / "traj.csv"
    out.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["time_s", "re_lambda1", "im_lambda1"]
    assert len(lines) == 3


def _sz_band_power(eig, sigma, spec, coupling, n_real):
    cfg = dynamics.TrajectoryConfig(n_steps=1 << 19, record_every=8, n_burn_in=dynamics.recommended_burn_in(eig, DT))
    row = model.spin_readout_rows()[:1]
    acc = 0.0
    for r in range(n_real):
        tr = noise.generate(spec.with_seed(noise.derive_seed(77, r)), DT, cfg.total_steps)
        out = dynamics.integrate(eig, tr, cfg, sigma, readout=row, coupling=coupling)
        f, p = signal.welch(out.records[:, 0].real, fs=1 / out.dt, nperseg=1 << 14)
        acc = acc + p
    return f, acc / n_real


@pytest.mark.parametrize("coupling", dynamics.COUPLINGS)
def test_integrator_matches_linear_response(ref, ref_eig, ref_sigma, coupling):
    spec = NoiseSpec(0.02 * ref.omega_larmor, 5.3e-9)
    f, psd = _sz_band_power(ref_eig, ref_sigma, spec, coupling, 8)
    band = (f > 2.4e6) & (f < 3.6e6)
    sim = psd[band].sum() * (f[1] - f[0])
    pred = dynamics.linear_response_psd(ref_eig, ref_sigma, model.spin_readout_rows()[0], f[band], spec, coupling)
    assert sim / (pred.sum() * (f[1] - f[0])) == pytest.approx(1.0, abs=0.06)


def test_step_size_convergence(ref):
    fine_dt = DT / 2
    spec = NoiseSpec(0.02 * ref.omega_larmor, 5.3e-9, seed=5)
    parts = model.assemble_liouvillian(ref)
    eig, sigma = dynamics.eigendecompose(parts), dynamics.steady_state(parts)
    n = 400_000
    tr = noise.generate_ou(spec, fine_dt, 2 * n)
    coarse_tr = noise.NoiseTrace(DT, tr.samples[::2].copy(), spec)
    row = model.spin_readout_rows()[:1]
    a = dynamics.integrate(eig, coarse_tr, dynamics.TrajectoryConfig(n, DT, record_every=4), sigma, readout=row)
    b = dynamics.integrate(eig, tr, dynamics.TrajectoryConfig(2 * n, fine_dt, record_every=8), sigma, readout=row)
    va, vb = np.var(a.records.real), np.var(b.records.real)
    assert abs(va / vb - 1) < 0.02


def test_oracle_zero_transverse_spin():
    tr = noise.generate_ou(NoiseSpec(1e6, 5e-9, seed=1), DT, 1000)
    lam = np.zeros(8)
    lam[1] = 0.4
    z, y = dynamics.perturbative_oracle(lam, tr, 3e5, 2e7)
    assert not np.any(z) and not np.any(y)


def test_oracle_is_linear_in_noise():
    tr = noise.generate_ou(NoiseSpec(1e6, 5e-9, seed=1), DT, 5000)
    lam = np.linspace(-0.3, 0.4, 8)
    z, y = dynamics.perturbative_oracle(lam, tr, 3e5, 2e7)
    z3, y3 = dynamics.perturbative_oracle(lam, tr.scaled(3.0), 3e5, 2e7)
    for a, b in ((z3, z), (y3, y)):
        assert np.max(np.abs(a - 3 * b)) <= 1e-13 * np.max(np.abs(a))


def test_oracle_matches_constant_drive():
    # Constant dw: the precession integral tends to dw / (gamma - i w_L).
    g, w, dw = 2e5, 1e7, 3e3
    tr = noise.NoiseTrace(DT, np.full(400_000, dw), NoiseSpec(1.0, 1.0))
    lam = np.zeros(8)
    lam[0], lam[2] = 0.2, 0.5
    z, y = dynamics.perturbative_oracle(lam, tr, g, w)
    j = dw / complex(g, -w)
    assert z[-1] == pytest.approx(0.5 * j.real - 0.2 * j.imag, rel=1e-5)
    assert y[-1] == pytest.approx(-0.2 * j.real - 0.5 * j.imag, rel=1e-5)


def test_oracle_correlator_shape(ref, ref_sigma):
    lam = model.decompose_lower_block(ref_sigma)
    spec = NoiseSpec(0.02 * ref.omega_larmor, 5.3e-9)
    period = 2 * math.pi / ref.omega_larmor
    lags = np.rint(np.array([0, 0.25, 0.5, 1.0, 10.0]) * period / DT).astype(int)
    lags = np.append(lags, int(round(1 / ref.gamma_t / DT)))
    skip = int(5 / ref.gamma_t / DT)
    acc = np.zeros(lags.size)
    n_real = 40
    for r in range(n_real):
        tr = noise.generate(spec.with_seed(noise.derive_seed(9, r)), DT, 300_000)
        z, _ = dynamics.perturbative_oracle(lam, tr, ref.gamma_t, ref.omega_larmor)
        z = z[skip:]
        acc += np.array([np.mean(z[: z.size - k] * z[k:]) for k in lags])
    acc /= n_real
    inp = analytics.PerturbationInputs(lam, ref.gamma_t, ref.omega_larmor, spec)
    expected = analytics.fr_correlator(inp, lags * DT)
    assert np.max(np.abs(acc - expected)) < 0.1 * expected[0]


def test_offdiagonal_diagnostic(ref_eig, ref_sigma):
    diag = dynamics.offdiagonal_coupling(ref_eig, ref_sigma)
    assert set(diag) == {"matrix_ratio", "source_ratio"}
    assert diag["matrix_ratio"] > 0 and math.isfinite(diag["source_ratio"])


def test_noise_psd_normalization():
    spec = NoiseSpec(2.0, 1e-8)
    w = np.linspace(-5e10, 5e10, 2_000_001)
    total = np.trapezoid(dynamics.noise_psd_two_sided(spec, w), w) / (2 * math.pi)
    assert total == pytest.approx(4.0, rel=2e-3)
    mod = NoiseSpec(2.0, 1e-8, omega_mod=3e8)
    total = np.trapezoid(dynamics.noise_psd_two_sided(mod, w), w) / (2 * math.pi)
    assert total == pytest.approx(4.0, rel=2e-3)
