"""Deterministic operators of the J=1 -> J'=0 four-level atom.

Basis ordering is ``{|-1>_z, |0>_z, |+1>_z, |e>}`` and density matrices are
flattened row-major into 16-component coherence vectors, so that
``sigma[4*i + j] == rho[i, j]``.  hbar = 1: every operator is stored in
angular-frequency units (rad/s).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)
TWO_PI = 2.0 * math.pi

N_LEVELS = 4
N_LOWER = 3
DIM = N_LEVELS * N_LEVELS


def idx(i: int, j: int) -> int:
    """Position of rho[i, j] in the flattened coherence vector."""
    return N_LEVELS * i + j


# Flattened positions of the entries the rest of the package reads directly.
POPULATION_SLOTS = (idx(0, 0), idx(1, 1), idx(2, 2))
EXCITED_SLOT = idx(3, 3)
COHERENCE_E_MINUS = idx(3, 0)  # rho_{e,-1}
COHERENCE_E_PLUS = idx(3, 2)  # rho_{e,+1}


class CorruptedStateError(ValueError):
    """Raised when a coherence vector no longer describes a Hermitian state."""


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters, all angular rates in rad/s and angles in rad."""

    gamma0: float
    gamma_dip: float
    gamma_t: float
    delta: float
    omega_rabi: float
    theta: float
    omega_larmor: float

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("gamma0", "gamma_dip", "gamma_t", "omega_rabi", "omega_larmor"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative rate, got {value!r}")
        if not math.isfinite(self.delta):
            raise ValueError(f"delta must be finite, got {self.delta!r}")
        if not math.isfinite(self.theta):
            raise ValueError(f"theta must be finite, got {self.theta!r}")
        if self.gamma_dip < 0.5 * self.gamma0:
            raise ValueError(
                f"gamma_dip ({self.gamma_dip:g}) must be at least gamma0/2 ({0.5 * self.gamma0:g})"
            )

    @classmethod
    def from_hz(
        cls,
        gamma0_hz: float,
        gamma_dip_hz: float,
        gamma_t_hz: float,
        delta_hz: float,
        omega_rabi_hz: float,
        theta_deg: float,
        omega_larmor_hz: float,
    ) -> "ModelParams":
        """Build from ordinary frequencies (x/2pi, in Hz) and theta in degrees."""
        return cls(
            gamma0=TWO_PI * gamma0_hz,
            gamma_dip=TWO_PI * gamma_dip_hz,
            gamma_t=TWO_PI * gamma_t_hz,
            delta=TWO_PI * delta_hz,
            omega_rabi=TWO_PI * omega_rabi_hz,
            theta=math.radians(theta_deg),
            omega_larmor=TWO_PI * omega_larmor_hz,
        )

    @classmethod
    def reference(cls, **overrides) -> "ModelParams":
        """Metastable-helium D0 parameters at 1.5 mW probe power.

        Keyword overrides are given in the native rad/s (rad for theta) units.
        """
        base = cls.from_hz(
            gamma0_hz=1.63e6,
            gamma_dip_hz=800e6,
            gamma_t_hz=60e3,
            delta_hz=1500e6,
            omega_rabi_hz=50e6,
            theta_deg=30.0,
            omega_larmor_hz=3e6,
        )
        return dataclasses.replace(base, **overrides) if overrides else base

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class LiouvillianParts:
    """``d sigma/dt = (l_bar + delta_omega(t) * m_b) sigma + eta``."""

    l_bar: np.ndarray
    m_b: np.ndarray
    eta: np.ndarray


def spin_matrices() -> np.ndarray:
    """The eight spin-1 basis matrices M1..M8 as an array of shape (8, 3, 3).

    M1, M2, M3 are S_z, S_x, S_y; M4..M8 are the rank-2 (alignment) operators.
    They are traceless, Hermitian and satisfy ``Tr(Mi Mj) = 2 delta_ij``.
    """
    m = np.zeros((8, 3, 3), dtype=complex)
    m[0] = np.diag([1.0, 0.0, -1.0])
    m[1] = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) / SQRT2
    m[2] = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]]) / SQRT2
    m[3] = np.array([[0, 0, 1], [0, 0, 0], [1, 0, 0]])
    m[4] = np.array([[0, 0, -1j], [0, 0, 0], [1j, 0, 0]])
    m[5] = np.array([[0, 1, 0], [1, 0, -1], [0, -1, 0]]) / SQRT2
    m[6] = np.array([[0, -1j, 0], [1j, 0, 1j], [0, -1j, 0]]) / SQRT2
    m[7] = np.diag([1.0, -2.0, 1.0]) / SQRT3
    m.setflags(write=False)
    return m


_SPIN = spin_matrices()


def rabi_components(omega_rabi: float, theta: float) -> tuple[complex, complex]:
    """Circular components (Omega_+, Omega_-) of a linearly polarized probe.

    Light propagates along z and the polarization makes an angle ``theta`` with
    the x axis (the B field).  Jones decomposition E_pm = (E_x -/+ i E_y)/sqrt2
    gives ``Omega_pm = Omega exp(-/+ i theta) / sqrt2``.
    """
    if omega_rabi < 0:
        raise ValueError("omega_rabi must be non-negative")
    amp = omega_rabi / SQRT2
    return complex(amp * np.exp(-1j * theta)), complex(amp * np.exp(1j * theta))


def build_hamiltonian(params: ModelParams, omega_larmor_inst: float) -> np.ndarray:
    """4x4 Hamiltonian (rad/s) at instantaneous Larmor frequency ``omega_larmor_inst``."""
    om_p, om_m = rabi_components(params.omega_rabi, params.theta)
    h = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    h[:3, :3] = omega_larmor_inst * _SPIN[1]
    h[0, 3] = np.conj(om_p) / SQRT3
    h[3, 0] = om_p / SQRT3
    h[2, 3] = -np.conj(om_m) / SQRT3
    h[3, 2] = -om_m / SQRT3
    h[3, 3] = params.delta
    return h


def _relaxation_rates(params: ModelParams) -> np.ndarray:
    rates = np.full((N_LEVELS, N_LEVELS), params.gamma_dip)
    rates[:3, :3] = params.gamma_t
    rates[3, 3] = params.gamma0
    return rates


def apply_dissipator(sigma: np.ndarray, params: ModelParams) -> np.ndarray:
    """Linear part of the relaxation term of d(sigma)/dt.

    Lower-level populations and coherences decay at gamma_t, optical
    coherences at gamma_dip, the excited population at gamma0, and each lower
    population is fed by gamma0 * rho_ee / 3.  The constant transit feeding
    gamma_t/3 is not included (see :func:`feeding_vector`).
    """
    rho = np.asarray(sigma, dtype=complex).reshape(N_LEVELS, N_LEVELS)
    out = -_relaxation_rates(params) * rho
    out[np.arange(3), np.arange(3)] += params.gamma0 / 3.0 * rho[3, 3]
    return out.reshape(DIM)


def feeding_vector(params: ModelParams) -> np.ndarray:
    eta = np.zeros(DIM)
    eta[list(POPULATION_SLOTS)] = params.gamma_t / 3.0
    return eta


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> -i [h, rho]`` for row-major flattening."""
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def _dissipator_superop(params: ModelParams) -> np.ndarray:
    rates = _relaxation_rates(params).reshape(DIM)
    d = np.diag(-rates).astype(complex)
    for slot in POPULATION_SLOTS:
        d[slot, EXCITED_SLOT] += params.gamma0 / 3.0
    return d


def larmor_generator() -> np.ndarray:
    """Exact derivative of l_bar with respect to omega_L (l_bar is affine in it)."""
    hb = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    hb[:3, :3] = _SPIN[1]
    return commutator_superop(hb)


def assemble_liouvillian(params: ModelParams) -> LiouvillianParts:
    l_bar = commutator_superop(build_hamiltonian(params, params.omega_larmor))
    l_bar += _dissipator_superop(params)
    return LiouvillianParts(l_bar=l_bar, m_b=larmor_generator(), eta=feeding_vector(params))


def thermal_state() -> np.ndarray:
    """Unpolarized lower level, empty excited state."""
    sigma = np.zeros(DIM, dtype=complex)
    sigma[list(POPULATION_SLOTS)] = 1.0 / 3.0
    return sigma


def vectorize(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho)
    if rho.shape != (N_LEVELS, N_LEVELS):
        raise ValueError(f"expected a 4x4 matrix, got shape {rho.shape}")
    return rho.reshape(DIM).astype(complex)


def devectorize(sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma)
    if sigma.shape != (DIM,):
        raise ValueError(f"expected 16 components, got shape {sigma.shape}")
    return sigma.reshape(N_LEVELS, N_LEVELS)


def lower_block(sigma: np.ndarray) -> np.ndarray:
    return devectorize(sigma)[:3, :3]


def decompose_lower_block(sigma: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Coefficients lambda_i = Tr(rho_lower M_i), i = 1..8 (returned 0-based).

    Raises :class:`CorruptedStateError` when the lower block is not Hermitian
    to within ``tol`` times its norm (absolute ``tol`` for a zero block).
    """
    rho = lower_block(sigma)
    scale = max(float(np.linalg.norm(rho)), 1.0)
    if np.linalg.norm(rho - rho.conj().T) > tol * scale:
        raise CorruptedStateError("lower 3x3 block of the state is not Hermitian")
    return np.einsum("ij,kji->k", rho, _SPIN).real


def reconstruct_lower_block(lam: np.ndarray, trace: float = 1.0) -> np.ndarray:
    """Inverse of :func:`decompose_lower_block`: trace/3 * 1 + 1/2 sum lambda_i M_i."""
    lam = np.asarray(lam, dtype=float)
    return trace / 3.0 * np.eye(3) + 0.5 * np.einsum("k,kij->ij", lam, _SPIN)


def spin_readout_rows() -> np.ndarray:
    """Rows r_k with ``r_k @ sigma == Tr(rho_lower M_k)`` for k = 1..8."""
    rows = np.zeros((8, DIM), dtype=complex)
    for i in range(3):
        for j in range(3):
            rows[:, idx(i, j)] = _SPIN[:, j, i]
    return rows
