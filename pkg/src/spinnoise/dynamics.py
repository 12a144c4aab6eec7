"""Eigenbasis integration of the stochastic master equation.

The Liouvillian is split as ``L(t) = l_bar + delta_omega(t) * m_b``.  In the
eigenbasis ``l_bar = P diag(lam) P^-1`` the field noise shifts every eigenvalue
by ``delta_omega * beta_i`` at first order, with ``beta_i = (P^-1 m_b P)_ii``.
:func:`integrate` advances the mode amplitudes with the exact exponential of
that diagonal model over each step; the off-diagonal part of ``P^-1 m_b P`` can
optionally be added as an exponential-Euler source (``coupling="full"``).

The module also holds the first-order perturbative Monte-Carlo oracle for the
transverse spin and a frequency-domain linear-response predictor used to
cross-check the integrator.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import signal
from scipy.optimize import linear_sum_assignment

from . import model
from .errors import (
    DefectiveLiouvillianError,
    DegenerateMatchingError,
    IntegrationError,
    SingularSteadyStateError,
)
from .noise import NoiseSpec, NoiseTrace, derive_seed, generate

COUPLINGS = ("diagonal", "full")
DEFAULT_DT = 5e-10


@dataclass(frozen=True)
class Eigensystem:
    """Diagonalized deterministic Liouvillian.

    ``coupling`` is the full matrix ``P^-1 m_b P``; ``beta`` is its diagonal.
    Eigenvector columns of ``p`` have unit 2-norm.
    """

    p: np.ndarray
    lambda_diag: np.ndarray
    p_inv: np.ndarray
    beta: np.ndarray
    eta_tilde: np.ndarray
    coupling: np.ndarray

    def to_modes(self, sigma: np.ndarray) -> np.ndarray:
        return self.p_inv @ np.asarray(sigma, dtype=complex)

    def from_modes(self, modes: np.ndarray) -> np.ndarray:
        return self.p @ modes

    def slowest_rate(self, floor: float = 1e-9) -> float:
        """Smallest decay rate among modes that actually decay.

        Rates below ``floor`` times the fastest rate count as conserved
        quantities (zero modes of a closed system) and are skipped.
        """
        rates = -self.lambda_diag.real
        fastest = float(rates.max())
        decaying = rates[rates > floor * fastest]
        return float(decaying.min())


def eigendecompose(parts: model.LiouvillianParts, cond_limit: float = 1e8) -> Eigensystem:
    """Diagonalize ``l_bar`` and project ``m_b`` and ``eta`` onto its modes.

    Raises
    ------
    DefectiveLiouvillianError
        If the eigenvector matrix has condition number above ``cond_limit``
        (a nearly defective generator), or if the spectrum is not dissipative.
    """
    lam, p = np.linalg.eig(parts.l_bar)
    p = p / np.linalg.norm(p, axis=0)
    cond = float(np.linalg.cond(p))
    if not math.isfinite(cond) or cond > cond_limit:
        raise DefectiveLiouvillianError(
            f"eigenvector condition number {cond:.3g} exceeds {cond_limit:.3g}; "
            "the Liouvillian is close to defective, perturb the parameters slightly"
        )
    p_inv = np.linalg.inv(p)
    scale = float(np.max(np.abs(lam)))
    if np.any(lam.real > 1e-10 * scale):
        raise DefectiveLiouvillianError(
            f"eigenvalue with positive real part {lam.real.max():.3g} rad/s"
        )
    coupling = p_inv @ parts.m_b @ p
    return Eigensystem(
        p=p,
        lambda_diag=lam,
        p_inv=p_inv,
        beta=np.diag(coupling).copy(),
        eta_tilde=p_inv @ parts.eta,
        coupling=coupling,
    )


def reconstruction_error(eig: Eigensystem, parts: model.LiouvillianParts) -> float:
    """Relative Frobenius error of ``P diag(lam) P^-1`` against ``l_bar``."""
    rebuilt = (eig.p * eig.lambda_diag) @ eig.p_inv
    return float(np.linalg.norm(rebuilt - parts.l_bar) / np.linalg.norm(parts.l_bar))


def _matched_eigenvalues(ref_vecs, params, omega_larmor):
    lam, vecs = np.linalg.eig(model.assemble_liouvillian(params.replace(omega_larmor=omega_larmor)).l_bar)
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    overlap = np.abs(ref_vecs.conj().T @ vecs)
    _, cols = linear_sum_assignment(-overlap)
    return lam, overlap, cols


def beta_finite_difference(
    params: model.ModelParams, d_omega: float, ambiguity: float = 0.01
) -> np.ndarray:
    """Central difference of the eigenvalues with respect to omega_L.

    Eigenvalues at ``omega_L +/- d_omega`` are matched to those at
    ``omega_L`` by maximal eigenvector overlap.  The result is ordered like
    ``eigendecompose(assemble_liouvillian(params)).lambda_diag``.

    Raises
    ------
    DegenerateMatchingError
        If, for some mode, a competing eigenvector overlaps within
        ``ambiguity`` (relative) of the chosen one while belonging to a
        different eigenvalue.
    """
    if not d_omega > 0:
        raise ValueError("d_omega must be positive")
    lam0, vecs0 = np.linalg.eig(model.assemble_liouvillian(params).l_bar)
    vecs0 = vecs0 / np.linalg.norm(vecs0, axis=0)
    shifted = []
    for sign in (1.0, -1.0):
        lam, overlap, cols = _matched_eigenvalues(
            vecs0, params, params.omega_larmor + sign * d_omega
        )
        scale = float(np.max(np.abs(lam)))
        for i, j in enumerate(cols):
            best = overlap[i, j]
            rivals = np.flatnonzero(overlap[i] >= (1.0 - ambiguity) * best)
            for k in rivals:
                if k != j and abs(lam[k] - lam[j]) > 1e-9 * scale:
                    raise DegenerateMatchingError(
                        f"mode {i}: eigenvector overlaps {best:.4f} and {overlap[i, k]:.4f} "
                        "are indistinguishable; eigenvalues are nearly degenerate"
                    )
        shifted.append(lam[cols])
    return (shifted[0] - shifted[1]) / (2.0 * d_omega)


def steady_state(parts: model.LiouvillianParts, cond_limit: float = 1e13) -> np.ndarray:
    """Optically pumped stationary state, ``sigma_st = -l_bar^-1 eta``.

    Raises
    ------
    SingularSteadyStateError
        If ``l_bar`` is singular (closed system with no transit), or the
        residual ``|l_bar sigma + eta|`` exceeds ``1e-10 |eta|``.
    """
    cond = float(np.linalg.cond(parts.l_bar))
    if not math.isfinite(cond) or cond > cond_limit:
        raise SingularSteadyStateError(
            f"l_bar is singular (condition number {cond:.3g}); a closed system "
            "(gamma_t = 0) has no unique steady state"
        )
    sigma = np.linalg.solve(parts.l_bar, -parts.eta.astype(complex))
    residual = np.linalg.norm(parts.l_bar @ sigma + parts.eta)
    if residual > 1e-10 * np.linalg.norm(parts.eta):
        # One step of iterative refinement before giving up.
        sigma = sigma + np.linalg.solve(parts.l_bar, -(parts.l_bar @ sigma + parts.eta))
        residual = np.linalg.norm(parts.l_bar @ sigma + parts.eta)
        if residual > 1e-10 * np.linalg.norm(parts.eta):
            raise SingularSteadyStateError(f"steady-state residual {residual:.3g} too large")
    return sigma


@dataclass(frozen=True)
class TrajectoryConfig:
    """Time grid and ensemble size of a stochastic run.

    ``record_every`` consecutive states are averaged into one recorded sample
    (boxcar decimation), so recorded samples are spaced ``dt * record_every``.
    """

    n_steps: int
    dt: float = DEFAULT_DT
    n_burn_in: int = 0
    n_realizations: int = 1
    base_seed: int = 0
    record_every: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be > 0, got {self.dt!r}")
        if self.n_steps <= 0:
            raise ValueError("n_steps must be positive")
        if self.n_burn_in < 0:
            raise ValueError("n_burn_in must be >= 0")
        if self.n_realizations <= 0:
            raise ValueError("n_realizations must be positive")
        if self.record_every <= 0 or self.n_steps < self.record_every:
            raise ValueError("record_every must be in [1, n_steps]")

    @property
    def total_steps(self) -> int:
        return self.n_burn_in + self.n_steps

    @property
    def n_records(self) -> int:
        return self.n_steps // self.record_every


def recommended_burn_in(eig: Eigensystem, dt: float, extra_rate: float | None = None) -> int:
    """Steps covering five time constants of the slowest decaying mode.

    ``extra_rate`` adds another five time constants of that rate in series.
    """
    t = 5.0 / eig.slowest_rate()
    if extra_rate:
        t += 5.0 / extra_rate
    return int(math.ceil(t / dt))


@dataclass(frozen=True)
class StateTrajectory:
    """Recorded projections of the state, one row per recorded sample."""

    dt: float
    records: np.ndarray
    labels: tuple

    def __post_init__(self):
        if self.records.ndim != 2 or self.records.shape[1] != len(self.labels):
            raise ValueError("records must have one column per label")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.records.shape[0] + 1)

    def __getitem__(self, label: str) -> np.ndarray:
        return self.records[:, self.labels.index(label)]

    def to_csv(self, path) -> None:
        header = ["time_s"]
        for name in self.labels:
            header += [f"re_{name}", f"im_{name}"]
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, row in zip(self.times, self.records):
                out = [repr(float(t))]
                for x in row:
                    out += [repr(float(x.real)), repr(float(x.imag))]
                writer.writerow(out)


SPIN_LABELS = tuple(f"lambda{i}" for i in range(1, 9))


@numba.njit(cache=True, nogil=True)
def _evolve(decay, beta, phi, source, off, use_off, s0, dw, dt, n_burn, n_steps, every, proj, out):
    m = s0.size
    s = s0.copy()
    kick = np.empty(m, dtype=np.complex128)
    acc = np.zeros(m, dtype=np.complex128)
    n_rec = n_steps // every
    rec = 0
    fill = 0
    for n in range(n_burn + n_rec * every):
        x = dw[n] * dt
        if use_off:
            for i in range(m):
                k = 0j
                for j in range(m):
                    k += off[i, j] * s[j]
                kick[i] = k * dw[n]
        tot = 0j
        for i in range(m):
            new = decay[i] * np.exp(x * beta[i]) * s[i] + source[i]
            if use_off:
                new += phi[i] * kick[i]
            s[i] = new
            tot += new
        if not (math.isfinite(tot.real) and math.isfinite(tot.imag)):
            return n
        if n >= n_burn:
            for i in range(m):
                acc[i] += s[i]
            fill += 1
            if fill == every:
                for r in range(proj.shape[0]):
                    v = 0j
                    for i in range(m):
                        v += proj[r, i] * acc[i]
                    out[rec, r] = v / every
                for i in range(m):
                    acc[i] = 0j
                fill = 0
                rec += 1
    return -1


def _phi(lam: np.ndarray, dt: float) -> np.ndarray:
    """(exp(lam dt) - 1)/lam with the lam -> 0 limit dt."""
    z = lam * dt
    out = np.empty_like(lam)
    small = np.abs(z) < 1e-6
    out[small] = dt * (1.0 + z[small] / 2.0 + z[small] ** 2 / 6.0)
    out[~small] = (np.exp(z[~small]) - 1.0) / lam[~small]
    return out


def integrate(
    eig: Eigensystem,
    noise: NoiseTrace,
    config: TrajectoryConfig,
    sigma0: np.ndarray,
    readout: np.ndarray | None = None,
    labels: tuple | None = None,
    coupling: str = "diagonal",
) -> StateTrajectory:
    """Advance the state through one noise realization.

    Each step applies ``s_i <- exp((lam_i + dw_n beta_i) dt) s_i + eta~_i phi_i``
    to the mode amplitudes, with ``phi_i = (exp(lam_i dt) - 1)/lam_i``.  With
    ``coupling="full"`` the off-diagonal part of ``P^-1 m_b P`` enters as an
    additional exponential-Euler source ``phi_i dw_n (C_off s)_i``.

    Parameters
    ----------
    readout : (k, 16) array, optional
        Rows applied to the coherence vector for each recorded sample.
        Defaults to the eight spin components ``Tr(rho_lower M_i)``.
    labels : tuple of str, optional
        Column names of the records; defaults to ``lambda1..lambda8`` or
        ``r0..r{k-1}`` for a custom readout.

    Raises
    ------
    IntegrationError
        On a non-finite state, reporting the step index.
    """
    if coupling not in COUPLINGS:
        raise ValueError(f"coupling must be one of {COUPLINGS}")
    if not math.isclose(noise.dt, config.dt, rel_tol=1e-12):
        raise ValueError(f"noise dt {noise.dt!r} differs from trajectory dt {config.dt!r}")
    if len(noise) < config.total_steps:
        raise ValueError(
            f"noise trace has {len(noise)} samples, need {config.total_steps}"
        )
    if readout is None:
        readout = model.spin_readout_rows()
        labels = labels or SPIN_LABELS
    readout = np.atleast_2d(np.asarray(readout, dtype=complex))
    if readout.shape[1] != model.DIM:
        raise ValueError("readout rows must have 16 components")
    labels = tuple(labels) if labels is not None else tuple(f"r{i}" for i in range(readout.shape[0]))

    dt = config.dt
    lam = eig.lambda_diag
    phi = _phi(lam, dt)
    off = eig.coupling - np.diag(eig.beta)
    out = np.zeros((config.n_records, readout.shape[0]), dtype=complex)
    bad = _evolve(
        np.exp(lam * dt),
        eig.beta.astype(complex),
        phi,
        eig.eta_tilde * phi,
        off,
        coupling == "full",
        eig.to_modes(sigma0),
        np.ascontiguousarray(noise.samples[: config.total_steps], dtype=float),
        dt,
        config.n_burn_in,
        config.n_steps,
        config.record_every,
        readout @ eig.p,
        out,
    )
    if bad >= 0:
        raise IntegrationError("non-finite state (overflow or NaN)", int(bad))
    return StateTrajectory(dt=dt * config.record_every, records=out, labels=labels)


def perturbative_oracle(
    lambda_st: np.ndarray, noise: NoiseTrace, gamma: float, omega_larmor: float
) -> tuple[np.ndarray, np.ndarray]:
    """First-order transverse-spin response to the field noise.

    Evaluates the two precession integrals

    ``C(t) + i S(t) = int_{-inf}^t dw(t') exp[(i omega_L - gamma)(t - t')] dt'``

    with the trapezoidal rule as a complex first-order recursion, then

    ``lambda_z1 = ly_st C - lz_st S`` and ``lambda_y1 = -lz_st C - ly_st S``

    where ``lz_st = lambda_st[0]`` (S_z) and ``ly_st = lambda_st[2]`` (S_y).
    The recursion starts from zero history, so the first few ``1/gamma`` of
    output are a transient.
    """
    lambda_st = np.asarray(lambda_st, dtype=float)
    lz, ly = float(lambda_st[0]), float(lambda_st[2])
    if lz == 0.0 and ly == 0.0:
        zeros = np.zeros(len(noise))
        return zeros, zeros.copy()
    dt = noise.dt
    a = np.exp((1j * omega_larmor - gamma) * dt)
    j = signal.lfilter([0.5 * dt, 0.5 * dt * a], [1.0, -a], noise.samples.astype(complex))
    c, s = j.real, j.imag
    return ly * c - lz * s, -lz * c - ly * s


def oracle_sz_variance(
    lambda_st: np.ndarray,
    spec: NoiseSpec,
    gamma: float,
    omega_larmor: float,
    n_realizations: int,
    n_steps: int,
    dt: float,
    base_seed: int = 0,
) -> tuple[float, float]:
    """Ensemble S_z variance of :func:`perturbative_oracle` and its standard error.

    The first ``5/gamma`` of every realization is discarded as the start-up
    transient.  Realization ``r`` uses ``derive_seed(base_seed, 0, r)``.
    """
    skip = int(math.ceil(5.0 / (gamma * dt)))
    if n_steps <= skip:
        raise ValueError(f"n_steps must exceed the {skip}-step oracle transient")
    if n_realizations < 2:
        raise ValueError("need at least 2 realizations for an error estimate")
    values = np.empty(n_realizations)
    for r in range(n_realizations):
        tr = generate(spec.with_seed(derive_seed(base_seed, 0, r)), dt, n_steps)
        z, _ = perturbative_oracle(lambda_st, tr, gamma, omega_larmor)
        values[r] = np.mean(z[skip:] ** 2)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_realizations))


def simulated_sz_variance(
    params: model.ModelParams,
    spec: NoiseSpec,
    config: TrajectoryConfig,
    coupling: str = "diagonal",
    burn_in_s: float | None = None,
) -> float:
    """Time-domain S_z variance from :func:`integrate`, averaged over realizations.

    Starts from the steady state; ``burn_in_s=None`` discards five time
    constants of the slowest mode.  Realization ``r`` uses
    ``derive_seed(config.base_seed, 1, r)``.
    """
    parts = model.assemble_liouvillian(params)
    eig = eigendecompose(parts)
    sigma = steady_state(parts)
    if burn_in_s is None:
        burn = recommended_burn_in(eig, config.dt)
    else:
        burn = int(math.ceil(burn_in_s / config.dt))
    config = dataclasses.replace(config, n_burn_in=burn)
    row = model.spin_readout_rows()[:1]
    values = []
    for r in range(config.n_realizations):
        tr = generate(spec.with_seed(derive_seed(config.base_seed, 1, r)), config.dt, config.total_steps)
        out = integrate(eig, tr, config, sigma, readout=row, coupling=coupling)
        values.append(np.var(out.records[:, 0].real))
    return float(np.mean(values))


def offdiagonal_coupling(eig: Eigensystem, sigma_st: np.ndarray) -> dict:
    """Size of the part of ``P^-1 m_b P`` that the diagonal model drops.

    Returns the Frobenius ratio of the off-diagonal to the diagonal part, and
    the ratio of the first-order noise sources they generate from the steady
    state, ``|C_off s~_st| / |beta * s~_st|``.
    """
    modes = eig.to_modes(sigma_st)
    off = eig.coupling - np.diag(eig.beta)
    diag_src = eig.beta * modes
    off_src = off @ modes
    norm_diag = float(np.linalg.norm(diag_src))
    return {
        "matrix_ratio": float(np.linalg.norm(off) / np.linalg.norm(eig.beta)),
        "source_ratio": float(np.linalg.norm(off_src) / norm_diag) if norm_diag > 0 else math.inf,
    }


def noise_psd_two_sided(spec: NoiseSpec, omegas: np.ndarray) -> np.ndarray:
    """Two-sided PSD of delta_omega per unit angular frequency.

    Normalized so that ``int S(w) dw / 2pi = omega_sigma**2``.
    """
    k = 1.0 / spec.tau_c
    w = np.asarray(omegas, dtype=float)
    lor = lambda x: k / (k * k + x * x)  # noqa: E731
    if spec.omega_mod > 0:
        return spec.omega_sigma**2 * (lor(w - spec.omega_mod) + lor(w + spec.omega_mod))
    return spec.omega_sigma**2 * 2.0 * lor(w)


def linear_response_psd(
    eig: Eigensystem,
    sigma_st: np.ndarray,
    row: np.ndarray,
    freqs_hz: np.ndarray,
    spec: NoiseSpec,
    coupling: str = "diagonal",
    part: str = "real",
) -> np.ndarray:
    """First-order one-sided PSD of ``Re`` or ``Im`` of ``row @ sigma(t)``.

    ``coupling="diagonal"`` predicts what :func:`integrate` produces with its
    default diagonal model; ``"full"`` keeps the whole ``P^-1 m_b P``.
    """
    if coupling not in COUPLINGS:
        raise ValueError(f"coupling must be one of {COUPLINGS}")
    if part not in ("real", "imag"):
        raise ValueError("part must be 'real' or 'imag'")
    modes = eig.to_modes(sigma_st)
    src = eig.beta * modes if coupling == "diagonal" else eig.coupling @ modes
    weights = (np.asarray(row, dtype=complex) @ eig.p) * src
    w = model.TWO_PI * np.asarray(freqs_hz, dtype=float)

    def transfer(x):
        return (weights[None, :] / (1j * x[:, None] - eig.lambda_diag[None, :])).sum(axis=1)

    pos, neg = transfer(w), np.conj(transfer(-w))
    h = 0.5 * (pos + neg) if part == "real" else (pos - neg) / 2j
    return 2.0 * np.abs(h) ** 2 * noise_psd_two_sided(spec, w)
