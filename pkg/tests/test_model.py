import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinnoise import model
from conftest import random_hermitian_state

M = model.spin_matrices()


def test_first_spin_matrix_is_sz():
    assert np.array_equal(M[0], np.diag([1.0, 0.0, -1.0]))


def test_basis_traceless_and_hermitian():
    for m in M:
        assert abs(np.trace(m)) < 1e-15
        assert np.allclose(m, m.conj().T, atol=0)


def test_orthogonality_all_pairs():
    gram = np.einsum("aij,bji->ab", M, M)
    assert np.max(np.abs(gram - 2 * np.eye(8))) < 1e-14


@pytest.mark.parametrize("a,b,c", [(1, 2, 0), (2, 0, 1), (0, 1, 2)])
def test_spin_one_commutation_cyclic(a, b, c):
    # S_x = M2, S_y = M3, S_z = M1 ; [S_x, S_y] = i S_z and cyclic
    lhs = M[a] @ M[b] - M[b] @ M[a]
    assert np.allclose(lhs, 1j * M[c], atol=1e-15)


def test_commutator_of_sx_and_sz():
    assert np.allclose(M[1] @ M[0] - M[0] @ M[1], -1j * M[2], atol=1e-15)


def test_rabi_components_examples():
    p, m = model.rabi_components(2.0, 0.0)
    assert p == pytest.approx(math.sqrt(2)) and m == pytest.approx(math.sqrt(2))
    p, m = model.rabi_components(2.0, math.pi / 4)
    assert abs(p) == pytest.approx(math.sqrt(2)) and abs(m) == pytest.approx(math.sqrt(2))
    assert np.angle(p / m) == pytest.approx(-math.pi / 2)
    assert model.rabi_components(0.0, 1.3) == (0j, 0j)


@given(st.floats(0, 1e9), st.floats(-10, 10))
def test_rabi_components_conserve_intensity(omega, theta):
    p, m = model.rabi_components(omega, theta)
    assert abs(p) ** 2 + abs(m) ** 2 == pytest.approx(omega**2, rel=1e-12, abs=1e-300)


def test_hamiltonian_entries(ref):
    h = model.build_hamiltonian(ref, 1.7e7)
    _, om_m = model.rabi_components(ref.omega_rabi, ref.theta)
    assert h[0, 1] == pytest.approx(1.7e7 / math.sqrt(2))
    assert h[3, 2] == pytest.approx(-om_m / math.sqrt(3))
    assert np.linalg.norm(h - h.conj().T) <= 1e-12 * np.linalg.norm(h)


def test_hamiltonian_without_fields():
    p = model.ModelParams.reference(omega_rabi=0.0, omega_larmor=0.0)
    h = model.build_hamiltonian(p, 0.0)
    assert np.array_equal(h, np.diag([0, 0, 0, p.delta]).astype(complex))


def test_dissipator_zero_and_excited_decay(ref):
    assert not np.any(model.apply_dissipator(np.zeros(16), ref))
    rho = np.zeros((4, 4), complex)
    rho[3, 3] = 1.0
    out = model.devectorize(model.apply_dissipator(model.vectorize(rho), ref))
    assert np.allclose(np.diag(out)[:3], ref.gamma0 / 3)
    assert out[3, 3] == pytest.approx(-ref.gamma0)


def test_optical_coherence_decays_at_dipole_rate(ref):
    rho = np.zeros((4, 4), complex)
    rho[0, 3] = 1.0
    out = model.devectorize(model.apply_dissipator(model.vectorize(rho), ref))
    assert out[0, 3] == pytest.approx(-ref.gamma_dip)


@given(st.complex_numbers(max_magnitude=1e3), st.complex_numbers(max_magnitude=1e3), st.integers(0, 2**32))
@settings(max_examples=30)
def test_dissipator_linear(a, b, seed):
    ref = model.ModelParams.reference()
    rng = np.random.default_rng(seed)
    s1 = rng.normal(size=16) + 1j * rng.normal(size=16)
    s2 = rng.normal(size=16) + 1j * rng.normal(size=16)
    lhs = model.apply_dissipator(a * s1 + b * s2, ref)
    rhs = a * model.apply_dissipator(s1, ref) + b * model.apply_dissipator(s2, ref)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


def test_affinity_in_larmor_frequency(ref, rng):
    base = model.assemble_liouvillian(ref.replace(omega_larmor=0.0))
    for w in rng.uniform(0, 1e8, size=10):
        lw = model.assemble_liouvillian(ref.replace(omega_larmor=w))
        assert np.linalg.norm(lw.l_bar - base.l_bar - w * base.m_b) == 0.0
    two = model.assemble_liouvillian(ref.replace(omega_larmor=2 * ref.omega_larmor))
    one = model.assemble_liouvillian(ref)
    assert np.allclose(two.l_bar - one.l_bar, ref.omega_larmor * one.m_b, atol=1e-6)


def test_feeding_vector(ref_parts, ref):
    eta = ref_parts.eta
    assert np.allclose(eta[[0, 5, 10]], ref.gamma_t / 3)
    assert np.count_nonzero(eta) == 3


def test_spectrum_is_dissipative(ref_parts):
    assert np.linalg.eigvals(ref_parts.l_bar).real.max() <= 1e-6


def test_liouvillian_matches_master_equation(ref, ref_parts, rng):
    rho = random_hermitian_state(rng, excited=0.2)
    h = model.build_hamiltonian(ref, ref.omega_larmor)
    expected = -1j * (h @ rho - rho @ h) + model.devectorize(model.apply_dissipator(model.vectorize(rho), ref))
    expected = expected + model.devectorize(model.feeding_vector(ref).astype(complex))
    got = ref_parts.l_bar @ model.vectorize(rho) + ref_parts.eta
    assert np.allclose(got, expected.reshape(16), rtol=1e-12, atol=1e-9)


def test_trace_functional_without_excitation(ref, ref_parts, rng):
    rho = random_hermitian_state(rng)
    rho[:3, :3] *= 0.9
    sigma = model.vectorize(rho)
    rate = ref_parts.l_bar @ sigma + ref_parts.eta
    pops = sigma[[0, 5, 10]].real.sum()
    assert rate[[0, 5, 10, 15]].sum().real == pytest.approx(ref.gamma_t * (1 - pops), rel=1e-9)


def test_decompose_examples():
    assert np.allclose(model.decompose_lower_block(model.thermal_state()), 0.0, atol=1e-16)
    rho = np.diag([2 / 3, 1 / 3, 0, 0]).astype(complex)
    lam = model.decompose_lower_block(model.vectorize(rho))
    assert lam[0] == pytest.approx(2 / 3)


def test_decompose_round_trip(rng):
    for _ in range(20):
        rho = random_hermitian_state(rng)
        lam = model.decompose_lower_block(model.vectorize(rho))
        back = model.reconstruct_lower_block(lam, np.trace(rho[:3, :3]).real)
        assert np.allclose(back, rho[:3, :3], atol=1e-15)


def test_decompose_rejects_non_hermitian():
    rho = np.zeros((4, 4), complex)
    rho[0, 1] = 0.3
    with pytest.raises(model.CorruptedStateError):
        model.decompose_lower_block(model.vectorize(rho))


def test_readout_rows_match_decomposition(rng):
    rho = random_hermitian_state(rng, excited=0.1)
    sigma = model.vectorize(rho)
    assert np.allclose(model.spin_readout_rows() @ sigma, model.decompose_lower_block(sigma), atol=1e-15)


def test_vectorize_round_trip(rng):
    rho = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert np.array_equal(model.devectorize(model.vectorize(rho)), rho)
    assert model.vectorize(rho)[1] == rho[0, 1]


@pytest.mark.parametrize("field", ["gamma0", "gamma_t", "omega_rabi", "omega_larmor"])
def test_negative_rates_rejected(field):
    with pytest.raises(ValueError, match=field):
        model.ModelParams.reference(**{field: -1.0})


def test_dipole_rate_must_include_spontaneous_emission():
    with pytest.raises(ValueError, match="gamma_dip"):
        model.ModelParams.reference(gamma_dip=1.0)
