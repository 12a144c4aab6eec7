"""Gaussian Larmor-frequency noise delta_omega_L(t).

Three generators are provided:

* :func:`generate_ou` - exact Ornstein-Uhlenbeck recursion, autocorrelation
  ``w_sigma**2 exp(-|tau|/tau_c)`` at every sampling step.
* :func:`generate_filtered_white` - white noise shaped by a Lorentzian filter
  in the frequency domain (approximate; kept as a cross-check).
* :func:`generate_modulated` - ``u cos(W t) + v sin(W t)`` with u, v
  independent OU traces, autocorrelation ``w_sigma**2 cos(W tau) exp(-|tau|/tau_c)``.

All generators draw from numpy's PCG64 bit generator seeded through
``SeedSequence(seed)``; identical arguments give bit-identical traces.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

METHODS = ("ou_process", "filtered_white")


@dataclass(frozen=True)
class NoiseSpec:
    omega_sigma: float
    tau_c: float
    omega_mod: float = 0.0
    seed: int = 0
    method: str = "ou_process"

    def __post_init__(self):
        if not (math.isfinite(self.omega_sigma) and self.omega_sigma >= 0):
            raise ValueError(f"omega_sigma must be >= 0, got {self.omega_sigma!r}")
        if not (math.isfinite(self.tau_c) and self.tau_c > 0):
            raise ValueError(f"tau_c must be > 0, got {self.tau_c!r}")
        if not (math.isfinite(self.omega_mod) and self.omega_mod >= 0):
            raise ValueError(f"omega_mod must be >= 0, got {self.omega_mod!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.omega_sigma, self.tau_c, self.omega_mod, int(seed), self.method)


@dataclass(frozen=True)
class NoiseTrace:
    dt: float
    samples: np.ndarray
    spec: NoiseSpec

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("a noise trace needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("noise trace contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.samples.size)

    def scaled(self, factor: float) -> "NoiseTrace":
        spec = NoiseSpec(
            abs(factor) * self.spec.omega_sigma,
            self.spec.tau_c,
            self.spec.omega_mod,
            self.spec.seed,
            self.spec.method,
        )
        return NoiseTrace(self.dt, factor * self.samples, spec)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "delta_omega_rad_per_s"])
            for t, x in zip(self.times, self.samples):
                writer.writerow([repr(float(t)), repr(float(x))])


def read_noise_csv(path, spec: NoiseSpec) -> NoiseTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, x = data[:, 0], data[:, 1]
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    return NoiseTrace(dt, x, spec)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def _check(dt: float, n_samples: int):
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")


def _ou_samples(rng: np.random.Generator, omega_sigma: float, tau_c: float, dt: float, n: int):
    xi = rng.standard_normal(n)
    if omega_sigma == 0.0:
        return np.zeros(n)
    a = math.exp(-dt / tau_c)
    kick = omega_sigma * math.sqrt(-math.expm1(-2.0 * dt / tau_c))
    # x_0 drawn from the stationary law, then x_{n+1} = a x_n + kick xi_{n+1}.
    drive = kick * xi
    drive[0] = omega_sigma * xi[0]
    return signal.lfilter([1.0], [1.0, -a], drive)


def generate_ou(spec: NoiseSpec, dt: float, n_samples: int) -> NoiseTrace:
    _check(dt, n_samples)
    if spec.omega_mod != 0.0:
        raise ValueError("generate_ou needs an unmodulated spec (omega_mod == 0)")
    x = _ou_samples(_rng(spec.seed), spec.omega_sigma, spec.tau_c, dt, n_samples)
    return NoiseTrace(dt, x, spec)


def lorentzian_filter(freqs: np.ndarray, tau_c: float, f_center: float = 0.0) -> np.ndarray:
    """Amplitude response 1/(1 + i 2pi sgn(f)(|f| - f_center) tau_c).

    Hermitian in f (so real input stays real); the power response is a
    Lorentzian of HWHM 1/(2 pi tau_c) Hz centred at +/- f_center.
    """
    shifted = np.sign(freqs) * (np.abs(freqs) - f_center)
    return 1.0 / (1.0 + 2j * math.pi * shifted * tau_c)


def generate_filtered_white(spec: NoiseSpec, dt: float, n_samples: int) -> NoiseTrace:
    _check(dt, n_samples)
    rng = _rng(spec.seed)
    white = rng.standard_normal(n_samples)
    if spec.omega_sigma == 0.0:
        return NoiseTrace(dt, np.zeros(n_samples), spec)
    freqs = np.fft.rfftfreq(n_samples, dt)
    h = lorentzian_filter(freqs, spec.tau_c, spec.omega_mod / (2 * math.pi))
    shaped = np.fft.irfft(np.fft.rfft(white) * h, n=n_samples)
    # Expected output variance of a circular filter on unit white noise.
    full = np.abs(h) ** 2
    weights = np.full(freqs.size, 2.0)
    weights[0] = 1.0
    if n_samples % 2 == 0:
        weights[-1] = 1.0
    gain = float(np.sum(weights * full)) / n_samples
    return NoiseTrace(dt, shaped * (spec.omega_sigma / math.sqrt(gain)), spec)


def generate_modulated(spec: NoiseSpec, dt: float, n_samples: int) -> NoiseTrace:
    _check(dt, n_samples)
    if not spec.omega_mod > 0:
        raise ValueError("generate_modulated needs omega_mod > 0")
    seq = np.random.SeedSequence(int(spec.seed))
    rng_u, rng_v = (np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(2))
    u = _ou_samples(rng_u, spec.omega_sigma, spec.tau_c, dt, n_samples)
    v = _ou_samples(rng_v, spec.omega_sigma, spec.tau_c, dt, n_samples)
    phase = spec.omega_mod * dt * np.arange(n_samples)
    return NoiseTrace(dt, u * np.cos(phase) + v * np.sin(phase), spec)


def generate(spec: NoiseSpec, dt: float, n_samples: int) -> NoiseTrace:
    """Dispatch on ``spec.method`` and ``spec.omega_mod``."""
    if spec.method == "filtered_white":
        return generate_filtered_white(spec, dt, n_samples)
    if spec.omega_mod > 0:
        return generate_modulated(spec, dt, n_samples)
    return generate_ou(spec, dt, n_samples)


def autocorrelation(trace: NoiseTrace, max_lag: int) -> np.ndarray:
    """Biased estimator C(k) = (1/N) sum_n x_n x_{n+k}, k = 0..max_lag."""
    x = np.asarray(trace.samples, dtype=float)
    n = x.size
    if not 0 <= max_lag < n:
        raise ValueError("max_lag must be smaller than the trace length")
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    return acf / n


def theoretical_autocorrelation(spec: NoiseSpec, lags_s: np.ndarray) -> np.ndarray:
    lags_s = np.asarray(lags_s, dtype=float)
    env = spec.omega_sigma**2 * np.exp(-np.abs(lags_s) / spec.tau_c)
    return env * np.cos(spec.omega_mod * lags_s)


def autocorrelation_stderr(spec: NoiseSpec, dt: float, n_samples: int, lags: np.ndarray) -> np.ndarray:
    """Bartlett standard error of the biased autocorrelation estimate.

    Var C(k) ~ (1/N) sum_m [R(m)^2 + R(m+k) R(m-k)] for a Gaussian process,
    evaluated from the theoretical autocorrelation of ``spec``.
    """
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    span = int(min(n_samples - 1, math.ceil(40.0 * spec.tau_c / dt)))
    m = np.arange(-span, span + 1)
    r = lambda k: theoretical_autocorrelation(spec, k * dt)  # noqa: E731
    out = np.empty(lags.size)
    for i, k in enumerate(lags):
        out[i] = np.sum(r(m) ** 2 + r(m + k) * r(m - k))
    return np.sqrt(np.maximum(out, 0.0) / n_samples)


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integer keys.

    Distinct key tuples give statistically independent streams, so sweeps can
    use ``derive_seed(base, point, realization)``.
    """
    seq = np.random.SeedSequence([int(k) for k in keys])
    return int(seq.generate_state(1, dtype=np.uint64)[0])
