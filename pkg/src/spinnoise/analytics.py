"""Closed-form first-order results for field-noise-induced spin fluctuations.

A stationary spin with transverse components (lambda_y, lambda_z) precesses
about x at omega_L and relaxes at gamma.  A Gaussian Larmor-frequency noise of
variance ``omega_sigma**2`` and correlation time ``tau_c`` then drives S_z
fluctuations whose correlator is available in closed form.
"""

from __future__ import annotations

import cmath
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .noise import NoiseSpec

# gamma must be this many times smaller than omega_L and 1/tau_c for the
# narrow-line correlator to apply.
VALIDITY_MARGIN = 5.0


class ValidityWarning(UserWarning):
    """The narrow-line correlator is used outside its regime of validity."""


@dataclass(frozen=True)
class PerturbationInputs:
    """Steady-state spin, relaxation rate, precession rate and field noise."""

    lambda_st: np.ndarray
    gamma: float
    omega_larmor: float
    noise: NoiseSpec

    def __post_init__(self):
        lam = np.asarray(self.lambda_st, dtype=float)
        if lam.shape != (8,):
            raise ValueError("lambda_st must hold 8 real coefficients")
        object.__setattr__(self, "lambda_st", lam)
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma!r}")

    @property
    def lambda_z(self) -> float:
        return float(self.lambda_st[0])

    @property
    def lambda_y(self) -> float:
        return float(self.lambda_st[2])

    def in_validity_regime(self) -> bool:
        g = self.gamma * VALIDITY_MARGIN
        return g <= self.omega_larmor and g * self.noise.tau_c <= 1.0


def ladder_coefficients(lambda_y: float, lambda_z: float) -> tuple[complex, complex]:
    """lambda_pm = lambda_y +/- i lambda_z."""
    return complex(lambda_y, lambda_z), complex(lambda_y, -lambda_z)


def transverse_spin_sq(lambda_st: np.ndarray) -> float:
    """<S_z>^2 + <S_y>^2, the squared spin component transverse to the field."""
    lam = np.asarray(lambda_st, dtype=float)
    return float(lam[0] ** 2 + lam[2] ** 2)


def _variance_prefactor(inputs: PerturbationInputs) -> float:
    spec = inputs.noise
    return transverse_spin_sq(inputs.lambda_st) * spec.omega_sigma**2 * spec.tau_c / (2.0 * inputs.gamma)


def fr_correlator(inputs: PerturbationInputs, lag):
    """Narrow-line S_z correlator <dS_z(T) dS_z(0)>.

    ``S_perp^2 (omega_sigma^2 tau_c / 2 gamma) cos(omega_L T) exp(-gamma |T|)
    / (1 + omega_L^2 tau_c^2)``.  Valid when gamma is small against both
    omega_L and 1/tau_c; outside that regime a :class:`ValidityWarning` is
    emitted and the value is still returned.
    """
    if not inputs.in_validity_regime():
        warnings.warn(
            "gamma is not small against omega_L and 1/tau_c; narrow-line correlator is approximate",
            ValidityWarning,
            stacklevel=2,
        )
    lag = np.asarray(lag, dtype=float)
    w, tc = inputs.omega_larmor, inputs.noise.tau_c
    value = _variance_prefactor(inputs) / (1.0 + (w * tc) ** 2)
    out = value * np.cos(w * lag) * np.exp(-inputs.gamma * np.abs(lag))
    return out if out.ndim else float(out)


def _full_positive(k: float, a: complex, b: complex, gamma: float, lag: float) -> complex:
    return cmath.exp(-k * lag) / ((a - k) * (b + k)) + (k / gamma) * cmath.exp(-a * lag) / (k * k - a * a)


def fr_correlator_full(inputs: PerturbationInputs, lag):
    """Complex correlator ``<lambda_+^(1)(T) lambda_-^(1)(0)>`` without the narrow-line limit.

    For T >= 0, with ``k = 1/tau_c``, ``a = gamma - i omega_L`` and
    ``b = gamma + i omega_L``::

        G(T) / (S_perp^2 omega_sigma^2) = exp(-kT) / ((a - k)(b + k))
                                        + (k / gamma) exp(-aT) / (k^2 - a^2)

    and ``G(-T) = conj(G(T))``.  The second term carries the precession and
    reduces to :func:`fr_correlator` when gamma << omega_L, 1/tau_c; the first
    follows the noise memory.  Half the real part is the S_z correlator.
    """
    spec = inputs.noise
    scale = transverse_spin_sq(inputs.lambda_st) * spec.omega_sigma**2
    k = 1.0 / spec.tau_c
    g, w = inputs.gamma, inputs.omega_larmor
    a, b = complex(g, -w), complex(g, w)
    lags = np.atleast_1d(np.asarray(lag, dtype=float))
    out = np.empty(lags.shape, dtype=complex)
    for i, t in enumerate(lags.flat):
        value = scale * _full_positive(k, a, b, g, abs(t))
        out.flat[i] = value if t >= 0 else value.conjugate()
    return out if np.ndim(lag) else complex(out[0])


def sz_correlator_full(inputs: PerturbationInputs, lag):
    """S_z correlator from :func:`fr_correlator_full` (half its real part)."""
    return 0.5 * np.real(fr_correlator_full(inputs, lag))


def fr_variance_modulated(inputs: PerturbationInputs) -> float:
    """S_z variance for noise modulated at ``inputs.noise.omega_mod``.

    ``S_perp^2 (omega_sigma^2 tau_c / 2 gamma) / (1 + (omega_L - W)^2 tau_c^2)``;
    W = 0 recovers the unmodulated variance.
    """
    spec = inputs.noise
    detuning = (inputs.omega_larmor - spec.omega_mod) * spec.tau_c
    return _variance_prefactor(inputs) / (1.0 + detuning**2)


def bandwidth_scaling(x):
    """f(x) = 1 / (1 + 1/x^2) with x = 1/(omega_L tau_c)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("bandwidth ratio must be positive")
    out = 1.0 / (1.0 + 1.0 / x**2)
    return out if out.ndim else float(out)


def alignment_channel_diagnostics(lambda_st: np.ndarray) -> dict:
    """Steady-state tensor coefficients that gate the ellipticity noise.

    lambda5 and lambda6 precess into each other and feed ellipticity noise at
    omega_L; lambda4, lambda7 and lambda8 feed the 2 omega_L feature.
    """
    lam = np.asarray(lambda_st, dtype=float)
    return {
        "lambda4": float(lam[3]),
        "lambda5": float(lam[4]),
        "lambda6": float(lam[5]),
        "lambda7": float(lam[6]),
        "lambda8": float(lam[7]),
    }


def lorentzian_fit_hwhm(x: np.ndarray, y: np.ndarray, center: float) -> tuple[float, float]:
    """Least-squares fit of ``A / (1 + ((x - center)/w)^2)``; returns (A, w)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def model(xx, amp, width):
        return amp / (1.0 + ((xx - center) / width) ** 2)

    guess = (float(y.max()), float(np.ptp(x)) / 4.0 or 1.0)
    popt, _ = curve_fit(model, x, y, p0=guess, maxfev=10000)
    return float(popt[0]), float(abs(popt[1]))


__all__ = [
    "PerturbationInputs",
    "ValidityWarning",
    "ladder_coefficients",
    "transverse_spin_sq",
    "fr_correlator",
    "fr_correlator_full",
    "sz_correlator_full",
    "fr_variance_modulated",
    "bandwidth_scaling",
    "alignment_channel_diagnostics",
    "lorentzian_fit_hwhm",
]
