"""Scenario files: YAML with explicit units in every key name.

Frequencies are ordinary frequencies (angular rate / 2pi) with a ``_hz``,
``_khz``, ``_mhz`` or ``_ghz`` suffix; times take ``_s``, ``_ms``, ``_us`` or
``_ns``; angles take ``_deg`` or ``_rad``.  Exactly one unit variant of a key
may be given.  Every field is validated before any computation starts and
errors name the offending field path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import dynamics, model, observables
from .noise import METHODS, NoiseSpec

FREQ_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
ANGLE_UNITS = {"deg": math.pi / 180.0, "rad": 1.0}
TASKS = ("steady-state", "simulate", "sweep", "analytic", "compare")

REFERENCE_MODEL = {
    "gamma0_mhz": 1.63,
    "gamma_dip_mhz": 800.0,
    "gamma_t_khz": 60.0,
    "delta_mhz": 1500.0,
    "omega_rabi_mhz": 50.0,
    "theta_deg": 30.0,
    "omega_larmor_mhz": 3.0,
}


class ConfigError(ValueError):
    """Malformed scenario; ``path`` is the dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: np.ndarray
    channel: str = "rotation"
    harmonic: int = 1
    fit_power_law: bool = False
    keep_spectra: bool = False


@dataclass(frozen=True)
class AnalyticSpec:
    lags_s: np.ndarray
    modulation_ratios: np.ndarray
    bandwidth_ratios: np.ndarray


@dataclass(frozen=True)
class CompareSpec:
    n_realizations: int
    n_steps: int
    tolerance: float
    statistical_tolerance: float
    omega_sigma_ratio: float


@dataclass(frozen=True)
class Scenario:
    name: str
    task: str
    params: model.ModelParams
    noise: NoiseSpec
    settings: observables.RunSettings
    burn_in: str | float
    sweep: SweepSpec | None
    analytic: AnalyticSpec | None
    compare: CompareSpec | None
    output_dir: Path
    plot: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


class _Section:
    def __init__(self, data, path: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(path, "expected a mapping")
        self.data = dict(data)
        self.path = path
        self.used: set = set()

    def sub(self, key: str, required: bool = False) -> "_Section | None":
        if key not in self.data:
            if required:
                raise ConfigError(self._p(key), "missing section")
            return None
        self.used.add(key)
        return _Section(self.data[key], self._p(key))

    def _p(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def _number(self, key: str, value) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(self._p(key), f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(self._p(key), "must be finite")
        return value

    def key_path(self, base: str, units: dict) -> str:
        """Dotted path of whichever unit variant of ``base`` is present."""
        for u in units:
            if f"{base}_{u}" in self.data:
                return self._p(f"{base}_{u}")
        return self._p(base)

    def has_any(self, base: str, units: dict) -> bool:
        return any(f"{base}_{u}" in self.data for u in units)

    def unit_value(self, base: str, units: dict, default=None, required: bool = True):
        found = [u for u in units if f"{base}_{u}" in self.data]
        if len(found) > 1:
            keys = ", ".join(f"{base}_{u}" for u in found)
            raise ConfigError(self._p(base), f"give only one of {keys}")
        if not found:
            if default is not None or not required:
                return default
            options = "|".join(units)
            raise ConfigError(self._p(f"{base}_<{options}>"), "missing field")
        key = f"{base}_{found[0]}"
        self.used.add(key)
        return self._number(key, self.data[key]) * units[found[0]]

    def unit_list(self, base: str, units: dict):
        found = [u for u in units if f"{base}_{u}" in self.data]
        if len(found) != 1:
            return None
        key = f"{base}_{found[0]}"
        self.used.add(key)
        return self._values(key, self.data[key]) * units[found[0]]

    def _values(self, key: str, spec) -> np.ndarray:
        if isinstance(spec, dict):
            sec = _Section(spec, self._p(key))
            start = sec.number("start")
            stop = sec.number("stop")
            num = sec.integer("num", minimum=1)
            scale = sec.choice("scale", ("linear", "log"), "linear")
            sec.finish()
            if scale == "log":
                if start <= 0 or stop <= 0:
                    raise ConfigError(self._p(key), "log-spaced values must be positive")
                return np.geomspace(start, stop, num)
            return np.linspace(start, stop, num)
        if isinstance(spec, list) and spec:
            return np.array([self._number(f"{key}[{i}]", v) for i, v in enumerate(spec)])
        raise ConfigError(self._p(key), "expected a non-empty list or {start, stop, num}")

    def values(self, key: str, required: bool = True):
        if key not in self.data:
            if required:
                raise ConfigError(self._p(key), "missing field")
            return None
        self.used.add(key)
        return self._values(key, self.data[key])

    def number(self, key: str, default=None) -> float:
        if key not in self.data:
            if default is None:
                raise ConfigError(self._p(key), "missing field")
            return default
        self.used.add(key)
        return self._number(key, self.data[key])

    def integer(self, key: str, default=None, minimum: int = 0) -> int:
        if key not in self.data:
            if default is None:
                raise ConfigError(self._p(key), "missing field")
            return default
        self.used.add(key)
        value = self.data[key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(self._p(key), f"expected an integer, got {value!r}")
        if value < minimum:
            raise ConfigError(self._p(key), f"must be >= {minimum}")
        return value

    def choice(self, key: str, options, default=None) -> str:
        if key not in self.data:
            if default is None:
                raise ConfigError(self._p(key), "missing field")
            return default
        self.used.add(key)
        value = self.data[key]
        if value not in options:
            raise ConfigError(self._p(key), f"must be one of {', '.join(map(str, options))}; got {value!r}")
        return value

    def boolean(self, key: str, default: bool) -> bool:
        if key not in self.data:
            return default
        self.used.add(key)
        value = self.data[key]
        if not isinstance(value, bool):
            raise ConfigError(self._p(key), f"expected true or false, got {value!r}")
        return value

    def text(self, key: str, default: str | None = None) -> str:
        if key not in self.data:
            if default is None:
                raise ConfigError(self._p(key), "missing field")
            return default
        self.used.add(key)
        value = self.data[key]
        if not isinstance(value, str):
            raise ConfigError(self._p(key), f"expected a string, got {value!r}")
        return value

    def finish(self):
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise ConfigError(self._p(unknown[0]), "unknown field")


def _positive(path: str, value: float, allow_zero: bool = False):
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(path, f"must be {'>= 0' if allow_zero else '> 0'}, got {value:g}")


def _parse_model(sec: _Section) -> model.ModelParams:
    values = {}
    for base in ("gamma0", "gamma_dip", "gamma_t", "delta", "omega_rabi", "omega_larmor"):
        default = None
        ref_key = next((k for k in REFERENCE_MODEL if k.rsplit("_", 1)[0] == base), None)
        if ref_key is not None and not sec.has_any(base, FREQ_UNITS):
            unit = ref_key.rsplit("_", 1)[1]
            default = REFERENCE_MODEL[ref_key] * FREQ_UNITS[unit]
        hz = sec.unit_value(base, FREQ_UNITS, default=default)
        if base != "delta":
            _positive(sec.key_path(base, FREQ_UNITS), hz, allow_zero=True)
        values[base] = model.TWO_PI * hz
    theta = sec.unit_value("theta", ANGLE_UNITS, default=math.radians(REFERENCE_MODEL["theta_deg"]))
    if "power_mw" in sec.data or "reference_power_mw" in sec.data:
        power = sec.number("power_mw")
        ref = sec.number("reference_power_mw")
        _positive(f"{sec.path}.power_mw", power, allow_zero=True)
        _positive(f"{sec.path}.reference_power_mw", ref)
        values["omega_rabi"] *= math.sqrt(power / ref)
    sec.finish()
    try:
        return model.ModelParams(theta=theta, **values)
    except ValueError as exc:
        raise ConfigError(sec.path, str(exc)) from None


def _parse_noise(sec: _Section, params: model.ModelParams) -> NoiseSpec:
    if "omega_sigma_over_omega_larmor" in sec.data:
        sigma = sec.number("omega_sigma_over_omega_larmor") * params.omega_larmor
        _positive(f"{sec.path}.omega_sigma_over_omega_larmor", sigma, allow_zero=True)
    else:
        sigma = model.TWO_PI * sec.unit_value("omega_sigma", FREQ_UNITS)
        _positive(sec.key_path("omega_sigma", FREQ_UNITS), sigma, allow_zero=True)
    if sec.has_any("tau_c", TIME_UNITS):
        tau_c = sec.unit_value("tau_c", TIME_UNITS)
        _positive(sec.key_path("tau_c", TIME_UNITS), tau_c)
    else:
        bw = sec.unit_value("bandwidth", FREQ_UNITS)
        _positive(sec.key_path("bandwidth", FREQ_UNITS), bw)
        tau_c = 1.0 / (model.TWO_PI * bw)
    omega_mod = model.TWO_PI * sec.unit_value("omega_mod", FREQ_UNITS, default=0.0)
    _positive(sec.key_path("omega_mod", FREQ_UNITS), omega_mod, allow_zero=True)
    method = sec.choice("method", METHODS, "ou_process")
    seed = sec.integer("seed", 0)
    sec.finish()
    return NoiseSpec(sigma, tau_c, omega_mod, seed, method)


def _parse_run(traj: _Section | None, spec: _Section | None, det: _Section | None, params, seed: int):
    traj = traj or _Section({}, "trajectory")
    dt = traj.unit_value("dt", TIME_UNITS, default=dynamics.DEFAULT_DT)
    _positive(traj.key_path("dt", TIME_UNITS), dt)
    every = traj.integer("record_every", 20, minimum=1)
    n_real = traj.integer("n_realizations", 4, minimum=1)
    n_segments = traj.integer("n_segments", 3, minimum=1)
    if "burn_in" in traj.data:
        burn = traj.choice("burn_in", ("auto",))
    else:
        burn = traj.unit_value("burn_in", TIME_UNITS, default="auto")
        if burn != "auto":
            _positive(traj.key_path("burn_in", TIME_UNITS), burn, allow_zero=True)
    coupling = traj.choice("coupling", dynamics.COUPLINGS, "diagonal")
    traj.finish()

    spec = spec or _Section({}, "spectrum")
    window = spec.choice("window", observables.WINDOWS, "hann")
    overlap = spec.number("overlap", 0.5)
    if not 0 <= overlap < 1:
        raise ConfigError(f"{spec.path}.overlap", "must be in [0, 1)")
    if "segment_len" in spec.data:
        seg = spec.integer("segment_len", minimum=16)
    else:
        rate = params.gamma_t if params.gamma_t > 0 else model.TWO_PI * 60e3
        seg = observables.default_segment_len(dt * every, rate)
    spec.finish()

    det = det or _Section({}, "detection")
    gain = det.number("gain", 1.0)
    _positive(f"{det.path}.gain", gain)
    det.finish()

    n_steps = seg * every * n_segments
    trajectory = dynamics.TrajectoryConfig(
        n_steps=n_steps, dt=dt, n_burn_in=0, n_realizations=n_real, base_seed=seed, record_every=every
    )
    settings = observables.RunSettings(
        trajectory=trajectory, segment_len=seg, detection_gain=gain, window=window,
        overlap=overlap, coupling=coupling, burn_in_s=None if burn == "auto" else burn,
    )
    return settings, burn


def _parse_sweep(sec: _Section, params: model.ModelParams) -> SweepSpec:
    axis = sec.choice("axis", observables.AXES)
    if axis == "theta":
        values = sec.unit_list("values", ANGLE_UNITS)
        if values is None:
            raise ConfigError(f"{sec.path}.values_<deg|rad>", "missing field")
    elif axis == "power":
        powers = sec.unit_list("power", {"mw": 1.0, "w": 1e3})
        if powers is None:
            raise ConfigError(f"{sec.path}.power_<mw|w>", "missing field")
        ref = sec.number("reference_power_mw")
        _positive(f"{sec.path}.reference_power_mw", ref)
        if np.any(powers <= 0):
            raise ConfigError(f"{sec.path}.power", "powers must be positive")
        values = powers / ref
    else:
        values = sec.values("values")
        if axis in ("bandwidth_fixed_psd",) and np.any(values <= 0):
            raise ConfigError(f"{sec.path}.values", "bandwidth ratios must be positive")
        if np.any(values < 0):
            raise ConfigError(f"{sec.path}.values", "values must be >= 0")
    channel = sec.choice("channel", observables.SIGNALS, "rotation")
    harmonic = sec.choice("harmonic", (1, 2), 1)
    fit = sec.boolean("fit_power_law", False)
    keep = sec.boolean("keep_spectra", False)
    sec.finish()
    return SweepSpec(axis, values, channel, harmonic, fit, keep_spectra=keep)


def _parse_analytic(sec: _Section) -> AnalyticSpec:
    lags = sec.unit_list("lags", TIME_UNITS)
    if lags is None:
        lags = np.linspace(0.0, 20e-6, 401)
    mods = sec.values("modulation_ratios", required=False)
    bws = sec.values("bandwidth_ratios", required=False)
    sec.finish()
    if bws is not None and np.any(bws <= 0):
        raise ConfigError(f"{sec.path}.bandwidth_ratios", "must be positive")
    return AnalyticSpec(
        lags_s=lags,
        modulation_ratios=mods if mods is not None else np.linspace(0.0, 2.0, 81),
        bandwidth_ratios=bws if bws is not None else np.geomspace(0.1, 30.0, 81),
    )


def _parse_compare(sec: _Section) -> CompareSpec:
    out = CompareSpec(
        n_realizations=sec.integer("n_realizations", 200, minimum=2),
        n_steps=sec.integer("n_steps", 400000, minimum=1000),
        tolerance=sec.number("tolerance", 0.10),
        statistical_tolerance=sec.number("statistical_tolerance", 0.05),
        omega_sigma_ratio=sec.number("omega_sigma_over_omega_larmor", 0.02),
    )
    sec.finish()
    return out


def parse(data, source: str = "<config>") -> Scenario:
    root = _Section(data, "")
    name = root.text("scenario", Path(source).stem)
    task = root.choice("task", TASKS, "simulate")
    params = _parse_model(root.sub("model") or _Section({}, "model"))
    noise_sec = root.sub("noise", required=True)
    noise = _parse_noise(noise_sec, params)
    settings, burn = _parse_run(root.sub("trajectory"), root.sub("spectrum"), root.sub("detection"), params, noise.seed)
    sweep_sec = root.sub("sweep")
    sweep = _parse_sweep(sweep_sec, params) if sweep_sec is not None else None
    if task == "sweep" and sweep is None:
        raise ConfigError("sweep", "task 'sweep' needs a sweep section")
    an_sec = root.sub("analytic")
    analytic = _parse_analytic(an_sec) if an_sec is not None else _parse_analytic(_Section({}, "analytic"))
    cmp_sec = root.sub("compare")
    compare = _parse_compare(cmp_sec or _Section({}, "compare"))
    out = Path(root.text("output_dir", f"out/{name}"))
    plot = root.data.get("plot", {}) or {}
    if "plot" in root.data:
        root.used.add("plot")
        if not isinstance(plot, dict):
            raise ConfigError("plot", "expected a mapping")
    root.finish()
    return Scenario(name, task, params, noise, settings, burn, sweep, analytic, compare, out, plot, dict(data))


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    return parse(data, str(path))


def bundled_config(name: str) -> Path:
    """Path of a configuration shipped with the package, e.g. ``fig3.cfg``."""
    path = Path(__file__).with_name("configs") / name
    if not path.exists():
        raise FileNotFoundError(name)
    return path
