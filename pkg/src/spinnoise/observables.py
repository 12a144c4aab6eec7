"""Polarimetric signals, spectra and parameter sweeps.

Detection model
---------------
Each circular probe component acquires a small complex factor from the
optical coherence it drives, ``E_pm_out = E_pm_in (1 + i kappa chi_pm)``.  The
output field is projected on the input polarization axis (``E_par``) and its
orthogonal (``E_perp``).  Balanced detection measures ``Re(E_par E_perp*)``
(polarization rotation); a quarter-wave plate in front of it measures
``Im(E_par E_perp*)`` (ellipticity).

``kappa`` is a real calibration gain, optionally rotated by the phase of the
unpumped-medium susceptibility so that dispersion maps onto rotation and
absorption onto ellipticity.
"""

from __future__ import annotations

import cmath
import dataclasses
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal, stats

from . import dynamics, model
from .noise import NoiseSpec, derive_seed, generate

CHANNELS = ("rotation", "ellipticity")
SIGNALS = ("rotation", "ellipticity", "sz")
AXES = ("theta", "power", "noise_variance", "bandwidth_fixed_psd", "modulation")
WINDOWS = ("hann", "boxcar", "hamming", "blackman")

# Band half-width around the resonance, in units of gamma_t.
BAND_HALF_WIDTH = 10.0
# Frequency resolution targets as fractions of gamma_t / 2pi.
RESOLUTION_FRACTION = 5.0
RESOLUTION_WARN_FRACTION = 3.0


@dataclass(frozen=True)
class DetectionConfig:
    channel: str = "rotation"
    gain: float = 1.0
    theta: float = 0.0
    phase_referenced: bool = True

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise ValueError(f"gain must be > 0, got {self.gain!r}")


@dataclass(frozen=True)
class SignalTrace:
    dt: float
    values: np.ndarray
    channel: str

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectral density in signal^2/Hz."""

    freqs: np.ndarray
    psd: np.ndarray
    n_averages: int
    window: str
    df: float
    flags: tuple = ()

    def to_csv(self, path) -> None:
        with Path(path).open("w") as fh:
            fh.write("# freq_hz,psd\n")
            for f, p in zip(self.freqs, self.psd):
                fh.write(f"{float(f)!r},{float(p)!r}\n")


@dataclass
class SweepResult:
    axis_name: str
    axis_values: np.ndarray
    variances: np.ndarray
    band_variances: dict = field(default_factory=dict)
    spectra: list | None = None

    def __post_init__(self):
        self.axis_values = np.asarray(self.axis_values, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        if self.axis_values.shape != self.variances.shape:
            raise ValueError("axis_values and variances must have the same length")
        for key, arr in self.band_variances.items():
            if np.shape(arr) != self.axis_values.shape:
                raise ValueError(f"band variance {key!r} has the wrong length")
        if self.spectra is not None and len(self.spectra) != self.axis_values.size:
            raise ValueError("one spectrum per axis value expected")

    def normalized(self) -> np.ndarray:
        return self.variances / self.variances.max()

    def to_csv(self, path) -> None:
        with Path(path).open("w") as fh:
            fh.write(f"# axis,{self.axis_name}\n")
            for v, var in zip(self.axis_values, self.variances):
                fh.write(f"{float(v)!r},{float(var)!r}\n")


def read_sweep_csv(path) -> SweepResult:
    with Path(path).open() as fh:
        header = fh.readline().strip()
    if not header.startswith("# axis,"):
        raise ValueError(f"{path}: not a sweep table")
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return SweepResult(header.split(",", 1)[1], data[:, 0], data[:, 1])


def chi_readout_rows(params: model.ModelParams) -> np.ndarray:
    """Rows giving (chi_plus, chi_minus) as linear functionals of the state.

    ``chi_+ = sqrt3 rho_{e,-1} / Omega_+`` and ``chi_- = -sqrt3 rho_{e,+1} / Omega_-``;
    a channel whose Rabi component vanishes reads 0.
    """
    om_p, om_m = model.rabi_components(params.omega_rabi, params.theta)
    rows = np.zeros((2, model.DIM), dtype=complex)
    if om_p != 0:
        rows[0, model.COHERENCE_E_MINUS] = model.SQRT3 / om_p
    if om_m != 0:
        rows[1, model.COHERENCE_E_PLUS] = -model.SQRT3 / om_m
    return rows


def optical_response(sigma: np.ndarray, params: model.ModelParams) -> tuple[complex, complex]:
    """Normalized susceptibilities (chi_plus, chi_minus) of the two circular components."""
    chi = chi_readout_rows(params) @ np.asarray(sigma, dtype=complex)
    return complex(chi[0]), complex(chi[1])


def reference_susceptibility(params: model.ModelParams) -> complex:
    """chi of the unpumped (thermal) medium in the weak-probe limit."""
    return -1.0 / (3.0 * complex(params.delta, -params.gamma_dip))


def adiabatic_optical_coherences(lower: np.ndarray, params: model.ModelParams) -> np.ndarray:
    """Coherence vector whose optical coherences follow a given lower block.

    Solves the optical-coherence equations at steady state for the fixed
    3x3 lower block ``lower`` (empty excited state).  Used to inject synthetic
    ground-state fluctuations straight into the detection model.
    """
    h = model.build_hamiltonian(params, params.omega_larmor)
    h_g, h_eg = h[:3, :3], h[3, :3]
    lower = np.asarray(lower, dtype=complex)
    # r (i h_g - (gamma_dip + i delta)) = i h_eg lower, for the row r = rho[3, :3]
    lhs = 1j * h_g - complex(params.gamma_dip, params.delta) * np.eye(3)
    r = np.linalg.solve(lhs.T, (1j * h_eg @ lower))
    rho = np.zeros((4, 4), dtype=complex)
    rho[:3, :3] = lower
    rho[3, :3] = r
    rho[:3, 3] = r.conj()
    return model.vectorize(rho)


def _kappa(params: model.ModelParams, config: DetectionConfig) -> complex:
    if not config.phase_referenced:
        return complex(config.gain)
    return config.gain * cmath.exp(-1j * cmath.phase(reference_susceptibility(params)))


def field_products(chi_plus, chi_minus, params: model.ModelParams, config: DetectionConfig) -> np.ndarray:
    """E_par * conj(E_perp) of the transmitted probe, before mean subtraction.

    In the frame of the input polarization the circular components are
    ``(1 + i kappa chi_pm)/sqrt2``, so ``E_par = 1 + i kappa (chi_+ + chi_-)/2``
    and ``E_perp = -kappa (chi_+ - chi_-)/2`` exactly.  Working in that frame
    avoids subtracting two nearly equal O(1) field components.
    """
    chi_plus = np.asarray(chi_plus, dtype=complex)
    chi_minus = np.asarray(chi_minus, dtype=complex)
    if chi_plus.shape != chi_minus.shape:
        raise ValueError("chi_plus and chi_minus must have the same length")
    kappa = _kappa(params, config)
    e_par = 1.0 + 0.5j * kappa * (chi_plus + chi_minus)
    e_perp = -0.5 * kappa * (chi_plus - chi_minus)
    return e_par * np.conj(e_perp)


def polarimetric_signals(
    chi_plus, chi_minus, params: model.ModelParams, config: DetectionConfig, dt: float = 1.0
) -> SignalTrace:
    """Mean-subtracted balanced-detection signal for ``config.channel``."""
    prod = field_products(chi_plus, chi_minus, params, config)
    raw = prod.real if config.channel == "rotation" else prod.imag
    raw = np.atleast_1d(raw)
    return SignalTrace(dt=dt, values=raw - raw.mean(), channel=config.channel)


def default_segment_len(dt: float, gamma_t: float) -> int:
    """Power-of-two segment giving df <= gamma_t / (2 pi * 5)."""
    target_df = gamma_t / (model.TWO_PI * RESOLUTION_FRACTION)
    n = 1.0 / (target_df * dt)
    return 1 << int(math.ceil(math.log2(n)))


def estimate_psd(
    sig: SignalTrace,
    segment_len: int,
    window: str = "hann",
    overlap: float = 0.5,
    gamma_t: float | None = None,
) -> Spectrum:
    """Welch estimate of the one-sided PSD (density scaling, mean removed per segment)."""
    if window not in WINDOWS:
        raise ValueError(f"window must be one of {WINDOWS}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must be in [0, 1)")
    n = len(sig)
    if segment_len < 2 or n < segment_len:
        raise ValueError(f"signal length {n} shorter than segment length {segment_len}")
    noverlap = int(round(overlap * segment_len))
    freqs, psd = signal.welch(
        sig.values,
        fs=1.0 / sig.dt,
        window=window,
        nperseg=segment_len,
        noverlap=noverlap,
        scaling="density",
        return_onesided=True,
    )
    step = segment_len - noverlap
    n_avg = 1 + (n - segment_len) // step
    df = 1.0 / (segment_len * sig.dt)
    flags = ()
    if gamma_t is not None and df > gamma_t / (model.TWO_PI * RESOLUTION_WARN_FRACTION):
        flags = ("coarse_resolution",)
        warnings.warn(
            f"frequency resolution {df:.4g} Hz does not resolve the transit linewidth",
            RuntimeWarning,
            stacklevel=2,
        )
    return Spectrum(freqs=freqs, psd=psd, n_averages=n_avg, window=window, df=df, flags=flags)


def average_spectra(spectra: list) -> Spectrum:
    if not spectra:
        raise ValueError("nothing to average")
    first = spectra[0]
    for s in spectra[1:]:
        if s.freqs.shape != first.freqs.shape or s.df != first.df:
            raise ValueError("spectra have different frequency grids")
    psd = np.mean([s.psd for s in spectra], axis=0)
    flags = tuple(sorted({f for s in spectra for f in s.flags}))
    return Spectrum(
        freqs=first.freqs,
        psd=psd,
        n_averages=sum(s.n_averages for s in spectra),
        window=first.window,
        df=first.df,
        flags=flags,
    )


def band_variance(spectrum: Spectrum, f_lo: float, f_hi: float) -> float:
    """Sum of psd * df over the bins with f_lo <= f <= f_hi."""
    if f_hi < f_lo:
        raise ValueError("f_hi must not be below f_lo")
    if f_lo > spectrum.freqs[-1] or f_hi < spectrum.freqs[0]:
        raise ValueError(f"band [{f_lo:g}, {f_hi:g}] Hz lies outside the spectrum")
    mask = (spectrum.freqs >= f_lo) & (spectrum.freqs <= f_hi)
    if not mask.any():
        raise ValueError(f"band [{f_lo:g}, {f_hi:g}] Hz contains no frequency bin")
    return float(np.sum(spectrum.psd[mask]) * spectrum.df)


def resonance_band(params: model.ModelParams, harmonic: int = 1) -> tuple[float, float]:
    """[h f_L - 10 gamma_t/2pi, h f_L + 10 gamma_t/2pi] in Hz."""
    center = harmonic * params.omega_larmor / model.TWO_PI
    half = BAND_HALF_WIDTH * params.gamma_t / model.TWO_PI
    return center - half, center + half


@dataclass(frozen=True)
class RunSettings:
    """Ensemble and spectral settings shared by simulations and sweeps.

    ``burn_in_s`` fixes the discarded lead-in time; ``None`` picks five time
    constants of the slowest decaying mode for every parameter point, which
    replaces ``trajectory.n_burn_in``.
    """

    trajectory: dynamics.TrajectoryConfig
    segment_len: int
    detection_gain: float = 1.0
    window: str = "hann"
    overlap: float = 0.5
    coupling: str = "diagonal"
    threads: int = 1
    burn_in_s: float | None = None


def _realization(eig, sigma0, rows, params, spec, traj, settings):
    tr = generate(spec, traj.dt, traj.total_steps)
    out = dynamics.integrate(eig, tr, traj, sigma0, readout=rows, coupling=settings.coupling)
    spectra = {}
    for channel in CHANNELS:
        det = DetectionConfig(channel=channel, gain=settings.detection_gain, theta=params.theta)
        sig = polarimetric_signals(out.records[:, 0], out.records[:, 1], params, det, dt=out.dt)
        spectra[channel] = estimate_psd(sig, settings.segment_len, settings.window, settings.overlap)
    sz = out.records[:, 2].real
    sz_sig = SignalTrace(dt=out.dt, values=sz - sz.mean(), channel="sz")
    spectra["sz"] = estimate_psd(sz_sig, settings.segment_len, settings.window, settings.overlap)
    return spectra


def simulate_spectra(
    params: model.ModelParams,
    spec: NoiseSpec,
    settings: RunSettings,
    point_index: int = 0,
    sigma0: np.ndarray | None = None,
) -> dict:
    """Ensemble-averaged spectra of the rotation, ellipticity and S_z signals.

    Realization ``r`` of sweep point ``p`` draws its noise from
    ``derive_seed(base_seed, p, r)``.  The initial state defaults to the
    steady state (thermal state for a closed system).
    """
    parts = model.assemble_liouvillian(params)
    eig = dynamics.eigendecompose(parts)
    traj = settings.trajectory
    if settings.burn_in_s is None:
        burn = dynamics.recommended_burn_in(eig, traj.dt)
    else:
        burn = int(math.ceil(settings.burn_in_s / traj.dt))
    traj = dataclasses.replace(traj, n_burn_in=burn)
    if sigma0 is None:
        sigma0 = model.thermal_state() if params.gamma_t == 0 else dynamics.steady_state(parts)
    rows = np.vstack([chi_readout_rows(params), model.spin_readout_rows()[:1]])
    specs = [spec.with_seed(derive_seed(traj.base_seed, point_index, r)) for r in range(traj.n_realizations)]

    def job(s):
        return _realization(eig, sigma0, rows, params, s, traj, settings)

    if settings.threads > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            results = list(pool.map(job, specs))
    else:
        results = [job(s) for s in specs]
    averaged = {key: average_spectra([r[key] for r in results]) for key in SIGNALS}
    df = averaged["rotation"].df
    if params.gamma_t > 0 and df > params.gamma_t / (model.TWO_PI * RESOLUTION_WARN_FRACTION):
        averaged = {k: _flag(v) for k, v in averaged.items()}
    return averaged


def _flag(s: Spectrum) -> Spectrum:
    return Spectrum(s.freqs, s.psd, s.n_averages, s.window, s.df, tuple(sorted(set(s.flags) | {"coarse_resolution"})))


def apply_axis(
    axis: str, value: float, params: model.ModelParams, spec: NoiseSpec
) -> tuple[model.ModelParams, NoiseSpec]:
    """Parameters of one sweep point.

    Axis values are: ``theta`` in rad; ``power`` as P/P_ref (Omega scales as
    its square root); ``noise_variance`` as omega_sigma^2/omega_L^2;
    ``bandwidth_fixed_psd`` as x = 1/(omega_L tau_c) with omega_sigma^2 tau_c
    held fixed; ``modulation`` as W/omega_L.
    """
    if axis == "theta":
        return params.replace(theta=float(value)), spec
    if axis == "power":
        if value <= 0:
            raise ValueError("relative power must be positive")
        return params.replace(omega_rabi=params.omega_rabi * math.sqrt(value)), spec
    if axis == "noise_variance":
        if value < 0:
            raise ValueError("noise variance ratio must be >= 0")
        return params, NoiseSpec(params.omega_larmor * math.sqrt(value), spec.tau_c, spec.omega_mod, spec.seed, spec.method)
    if axis == "bandwidth_fixed_psd":
        if value <= 0:
            raise ValueError("bandwidth ratio must be positive")
        tau_c = 1.0 / (value * params.omega_larmor)
        sigma = spec.omega_sigma * math.sqrt(spec.tau_c / tau_c)
        return params, NoiseSpec(sigma, tau_c, spec.omega_mod, spec.seed, spec.method)
    if axis == "modulation":
        if value < 0:
            raise ValueError("modulation ratio must be >= 0")
        return params, NoiseSpec(spec.omega_sigma, spec.tau_c, value * params.omega_larmor, spec.seed, spec.method)
    raise ValueError(f"axis must be one of {AXES}, got {axis!r}")


def sweep(
    params: model.ModelParams,
    noise_spec: NoiseSpec,
    settings: RunSettings,
    axis: str,
    values,
    channel: str = "rotation",
    harmonic: int = 1,
    keep_spectra: bool = False,
) -> SweepResult:
    """Band variances of every signal along one parameter axis.

    ``variances`` holds the ``channel`` variance in the band around
    ``harmonic * omega_L``; ``band_variances`` holds every signal in both the
    omega_L and 2 omega_L bands, keyed like ``"ellipticity@2"``.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    if channel not in SIGNALS:
        raise ValueError(f"channel must be one of {SIGNALS}")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("sweep needs at least one value")
    bands = {f"{sig}@{h}": np.empty(values.size) for sig in SIGNALS for h in (1, 2)}
    kept = []
    for i, v in enumerate(values):
        p, s = apply_axis(axis, float(v), params, noise_spec)
        spectra = simulate_spectra(p, s, settings, point_index=i)
        for h in (1, 2):
            lo, hi = resonance_band(p, h)
            for sig in SIGNALS:
                bands[f"{sig}@{h}"][i] = band_variance(spectra[sig], lo, hi)
        if keep_spectra:
            kept.append(spectra)
    return SweepResult(
        axis_name=axis,
        axis_values=values,
        variances=bands[f"{channel}@{harmonic}"].copy(),
        band_variances=bands,
        spectra=kept if keep_spectra else None,
    )


def fit_power_law(xs, ys) -> tuple[float, float, float]:
    """Fit y = a x^k by least squares in log-log space; returns (a, k, stderr of k)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size != ys.size:
        raise ValueError("xs and ys must have the same length")
    if xs.size < 3:
        raise ValueError("a power-law fit needs at least 3 points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("power-law fit needs strictly positive data")
    fit = stats.linregress(np.log(xs), np.log(ys))
    return float(math.exp(fit.intercept)), float(fit.slope), float(fit.stderr)
