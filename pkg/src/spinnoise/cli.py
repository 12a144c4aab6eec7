"""Command-line front end.

Usage::

    spinnoise <command> --config FILE [--seed N] [--out DIR] [--threads N]

Commands are ``steady-state``, ``simulate``, ``sweep``, ``analytic``,
``compare`` and ``run`` (runs the task named in the file).  Exit status is 0
on success, 1 on a numerical failure and 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, analytics, config, dynamics, model, observables
from .errors import NumericalError

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2
# Fraction of the sweep maximum below which a steady-state transverse spin counts as a null.
NULL_FRACTION = 0.02


class StageFailure(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


class Runner:
    """Holds one scenario run: output directory, timings and stage tracking."""

    def __init__(self, scenario: config.Scenario, command: str, config_path: Path, out=None):
        self.sc = scenario
        self.command = command
        self.config_path = config_path
        self.out_dir = scenario.output_dir
        self.stdout = out
        self.timings: dict = {}
        self.files: list = []
        self.notes: list = []

    def stage(self, name: str):
        return _Stage(self, name)

    def say(self, text: str = ""):
        print(text, file=self.stdout or sys.stdout)

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def manifest(self):
        raw = self.config_path.read_bytes()
        data = {
            "scenario": self.sc.name,
            "command": self.command,
            "config": str(self.config_path),
            "config_sha256": hashlib.sha256(raw).hexdigest(),
            "software": {"spinnoise": __version__, "numpy": np.__version__, "python": platform.python_version()},
            "seed": self.sc.noise.seed,
            "threads": self.sc.settings.threads,
            "timings_s": {k: round(v, 4) for k, v in self.timings.items()},
            "outputs": sorted(set(self.files)),
            "notes": self.notes,
        }
        path = self.out_dir / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2) + "\n")


class _Stage:
    def __init__(self, runner: Runner, name: str):
        self.runner, self.name = runner, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.runner.timings[self.name] = self.runner.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if exc_type is None or exc_type is StageFailure:
            return False
        if issubclass(exc_type, (NumericalError, ValueError, ArithmeticError, np.linalg.LinAlgError)):
            stage = getattr(exc, "stage", None) or self.name
            raise StageFailure(f"{self.name}/{stage}" if stage != self.name else stage, str(exc)) from exc
        return False


def _lambda_table_header():
    return ",".join([f"lambda{i}" for i in range(1, 9)] + ["s_perp_sq", "rho_ee"])


def _steady(params: model.ModelParams):
    parts = model.assemble_liouvillian(params)
    sigma = dynamics.steady_state(parts)
    lam = model.decompose_lower_block(sigma)
    return sigma, lam


def _theta_max_sperp(params: model.ModelParams) -> float:
    grid = np.radians(np.linspace(0.0, 90.0, 91))
    return max(analytics.transverse_spin_sq(_steady(params.replace(theta=t))[1]) for t in grid)


def cmd_steady_state(r: Runner):
    sc = r.sc
    if sc.sweep is not None and sc.sweep.axis in ("theta", "power"):
        with r.stage("steady_state"):
            rows = []
            for v in sc.sweep.values:
                p, _ = observables.apply_axis(sc.sweep.axis, v, sc.params, sc.noise)
                sigma, lam = _steady(p)
                rows.append([v, *lam, analytics.transverse_spin_sq(lam), sigma[model.EXCITED_SLOT].real])
        rows = np.array(rows)
        unit = "theta_deg" if sc.sweep.axis == "theta" else "relative_power"
        if sc.sweep.axis == "theta":
            rows[:, 0] = np.degrees(rows[:, 0])
        path = r.path("steady_state_sweep.csv")
        np.savetxt(path, rows, delimiter=",", header=f"{unit},{_lambda_table_header()}", comments="# ")
        peak = rows[:, 9].max()
        r.say(f"{unit:>14} {'s_perp_sq':>12} {'ratio':>9} {'lambda5':>12} {'lambda6':>12}")
        for row in rows:
            ratio = row[9] / peak if peak > 0 else 0.0
            r.say(f"{row[0]:14.4g} {row[9]:12.4e} {ratio:9.3g} {row[5]:12.4e} {row[6]:12.4e}")
        _gnuplot_steady(r, unit, sc.plot.get("quantity", "s_perp_sq"))
        return
    with r.stage("steady_state"):
        sigma, lam = _steady(sc.params)
        s_perp = analytics.transverse_spin_sq(lam)
        peak = _theta_max_sperp(sc.params)
    ratio = s_perp / peak if peak > 0 else 0.0
    for i, v in enumerate(lam, start=1):
        r.say(f"lambda{i} = {v: .6e}")
    r.say(f"s_perp_sq = {s_perp:.6e}")
    r.say(f"rho_ee = {sigma[model.EXCITED_SLOT].real:.6e}")
    status = "null" if ratio < NULL_FRACTION else "non-null"
    r.say(f"s_perp_sq / max over theta = {ratio:.3e} ({status}, threshold {NULL_FRACTION})")
    path = r.path("steady_state.csv")
    row = np.array([[math.degrees(sc.params.theta), *lam, s_perp, sigma[model.EXCITED_SLOT].real]])
    np.savetxt(path, row, delimiter=",", header=f"theta_deg,{_lambda_table_header()}", comments="# ")


def _band_summary(spectra: dict, params: model.ModelParams) -> dict:
    out = {}
    for h in (1, 2):
        lo, hi = observables.resonance_band(params, h)
        for sig in observables.SIGNALS:
            out[f"{sig}@{h}"] = observables.band_variance(spectra[sig], lo, hi)
    return out


def cmd_simulate(r: Runner):
    sc = r.sc
    with r.stage("simulate"):
        spectra = observables.simulate_spectra(sc.params, sc.noise, sc.settings)
    for sig, spec in spectra.items():
        spec.to_csv(r.path(f"spectrum_{sig}.csv"))
        if spec.flags:
            r.notes.append(f"spectrum_{sig}: {', '.join(spec.flags)}")
    with r.stage("band_variance"):
        bands = _band_summary(spectra, sc.params)
    with r.path("bands.csv").open("w") as fh:
        fh.write("# band,variance\n")
        for k, v in bands.items():
            fh.write(f"{k},{float(v)!r}\n")
            r.say(f"{k:16s} {v:.6e}")
    _gnuplot_spectra(r)


def cmd_sweep(r: Runner):
    sc = r.sc
    sw = sc.sweep
    if sw is None:
        raise config.ConfigError("sweep", "missing section")
    with r.stage("sweep"):
        res = observables.sweep(
            sc.params, sc.noise, sc.settings, sw.axis, sw.values,
            channel=sw.channel, harmonic=sw.harmonic, keep_spectra=sw.keep_spectra,
        )
    display = np.degrees(res.axis_values) if sw.axis == "theta" else res.axis_values
    name = "theta_deg" if sw.axis == "theta" else sw.axis
    table = observables.SweepResult(name, display, res.variances, res.band_variances)
    table.to_csv(r.path("sweep.csv"))
    keys = list(res.band_variances)
    with r.path("bands.csv").open("w") as fh:
        fh.write(f"# axis,{name}\n# value,{','.join(keys)}\n")
        for i, v in enumerate(display):
            fh.write(",".join([repr(float(v))] + [repr(float(res.band_variances[k][i])) for k in keys]) + "\n")
    if res.spectra:
        for i, spectra in enumerate(res.spectra):
            for sig, spec in spectra.items():
                spec.to_csv(r.path(f"spectra/{sig}_{i:03d}.csv"))
    peak = res.variances.max()
    r.say(f"{name:>16} {'variance':>14} {'normalized':>11}")
    for v, var in zip(display, res.variances):
        r.say(f"{v:16.6g} {var:14.6e} {var / peak if peak > 0 else 0.0:11.4f}")
    if sw.fit_power_law:
        with r.stage("fit"):
            a, k, err = observables.fit_power_law(res.axis_values, res.variances)
        r.path("fit.txt").write_text(f"# y = a x^k\na = {a!r}\nk = {k!r}\nk_stderr = {err!r}\n")
        r.say(f"power-law fit: k = {k:.4f} +/- {err:.4f}")
    _gnuplot_sweep(r, name, sw.fit_power_law, polar=sw.axis == "theta")


def cmd_analytic(r: Runner):
    sc = r.sc
    an = sc.analytic
    with r.stage("steady_state"):
        _, lam = _steady(sc.params)
    if sc.params.gamma_t <= 0:
        raise config.ConfigError("model.gamma_t", "the closed-form correlators need gamma_t > 0")
    inputs = analytics.PerturbationInputs(lam, sc.params.gamma_t, sc.params.omega_larmor, sc.noise)
    with r.stage("analytic"), warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", analytics.ValidityWarning)
        narrow = np.atleast_1d(analytics.fr_correlator(inputs, an.lags_s))
        full = np.atleast_1d(analytics.fr_correlator_full(inputs, an.lags_s))
        mods = []
        for x in an.modulation_ratios:
            spec = dataclasses.replace(sc.noise, omega_mod=x * sc.params.omega_larmor)
            mods.append(analytics.fr_variance_modulated(dataclasses.replace(inputs, noise=spec)))
        bw = analytics.bandwidth_scaling(an.bandwidth_ratios)
    for w in caught:
        r.notes.append(str(w.message))
        r.say(f"warning: {w.message}")
    np.savetxt(
        r.path("correlator.csv"),
        np.column_stack([an.lags_s, narrow, 0.5 * full.real, full.real, full.imag]),
        delimiter=",", comments="# ",
        header="lag_s,sz_narrow_line,sz_full,re_full_ladder,im_full_ladder",
    )
    mods = np.array(mods)
    norm = mods / mods.max() if mods.max() > 0 else mods
    np.savetxt(
        r.path("modulated.csv"), np.column_stack([an.modulation_ratios, mods, norm]),
        delimiter=",", comments="# ", header="omega_mod_over_omega_larmor,variance,normalized",
    )
    np.savetxt(
        r.path("bandwidth.csv"), np.column_stack([an.bandwidth_ratios, np.atleast_1d(bw)]),
        delimiter=",", comments="# ", header="bandwidth_over_omega_larmor,f",
    )
    r.say(f"s_perp_sq = {analytics.transverse_spin_sq(lam):.6e}")
    r.say(f"variance (narrow line) = {narrow[np.argmin(np.abs(an.lags_s))]:.6e}")
    _gnuplot_analytic(r)


def cmd_compare(r: Runner):
    sc = r.sc
    cmp = sc.compare
    p = sc.params
    spec = dataclasses.replace(sc.noise, omega_sigma=cmp.omega_sigma_ratio * p.omega_larmor, omega_mod=0.0)
    with r.stage("steady_state"):
        _, lam = _steady(p)
    inputs = analytics.PerturbationInputs(lam, p.gamma_t, p.omega_larmor, spec)
    with r.stage("analytic"), warnings.catch_warnings():
        warnings.simplefilter("ignore", analytics.ValidityWarning)
        narrow = analytics.fr_correlator(inputs, 0.0)
        full = float(analytics.sz_correlator_full(inputs, 0.0))
    with r.stage("oracle"):
        oracle, oracle_err = dynamics.oracle_sz_variance(
            lam, spec, p.gamma_t, p.omega_larmor, cmp.n_realizations, cmp.n_steps,
            sc.settings.trajectory.dt, spec.seed,
        )
    with r.stage("simulate"):
        sims = {}
        for coupling in dynamics.COUPLINGS:
            sims[coupling] = dynamics.simulated_sz_variance(
                p, spec, sc.settings.trajectory, coupling, sc.settings.burn_in_s
            )
        sim = sims[sc.settings.coupling]
        parts = model.assemble_liouvillian(p)
        diag = dynamics.offdiagonal_coupling(dynamics.eigendecompose(parts), dynamics.steady_state(parts))
    checks = [
        ("oracle_vs_narrow_line", abs(oracle / narrow - 1.0), cmp.statistical_tolerance),
        ("simulator_vs_oracle", abs(sim / oracle - 1.0), cmp.tolerance),
        ("full_vs_narrow_line", abs(full / narrow - 1.0), 0.01),
    ]
    lines = [
        f"scenario: {sc.name}",
        f"omega_sigma / omega_L = {cmp.omega_sigma_ratio}",
        f"variance narrow-line formula  = {narrow:.6e}",
        f"variance full correlator      = {full:.6e}",
        f"variance oracle ({cmp.n_realizations} runs)    = {oracle:.6e} +/- {oracle_err:.2e}",
        *(f"variance simulator ({c}){' ' * (9 - len(c))} = {v:.6e}" for c, v in sims.items()),
        f"checked simulator coupling: {sc.settings.coupling}",
        f"neglected coupling: matrix ratio {diag['matrix_ratio']:.3g}, source ratio {diag['source_ratio']:.3g}",
    ]
    status = "PASS"
    for name, err, tol in checks:
        ok = err <= tol
        status = status if ok else "FAIL"
        lines.append(f"{name}: relative error {err:.4f} (tolerance {tol}) {'PASS' if ok else 'FAIL'}")
    lines.append(f"status: {status}")
    r.path("compare_report.txt").write_text("\n".join(lines) + "\n")
    payload = {
        "narrow_line": narrow, "full": full, "oracle": oracle, "oracle_stderr": oracle_err,
        "simulator": sims, "coupling": sc.settings.coupling, "offdiagonal": diag,
        "checks": {n: {"error": e, "tolerance": t, "pass": e <= t} for n, e, t in checks},
        "status": status,
    }
    r.path("compare.json").write_text(json.dumps(payload, indent=2) + "\n")
    for line in lines:
        r.say(line)


def _write_gnuplot(r: Runner, body: str):
    r.path("plot.gp").write_text(
        f"# gnuplot script for {r.sc.name}\nset datafile separator ','\nset terminal pngcairo size 900,650\n"
        f"set output '{r.sc.name}.png'\n" + body
    )


def _gnuplot_steady(r: Runner, unit: str, quantity: str):
    cols = {"s_perp_sq": "using 1:10 with linespoints title 'transverse spin squared'",
            "lambda5_lambda6": "using 1:6 with lines title 'lambda5', '' using 1:7 with lines title 'lambda6'"}
    spec = cols.get(quantity, cols["s_perp_sq"])
    _write_gnuplot(r, f"set xlabel '{unit}'\nplot 'steady_state_sweep.csv' {spec}\n")


def _gnuplot_spectra(r: Runner):
    _write_gnuplot(
        r,
        "set xlabel 'frequency (Hz)'\nset ylabel 'PSD (arb. units)'\nset logscale y\n"
        "plot 'spectrum_rotation.csv' using 1:2 with lines title 'rotation', "
        "'spectrum_ellipticity.csv' using 1:2 with lines title 'ellipticity'\n",
    )


def _gnuplot_sweep(r: Runner, name: str, loglog: bool, polar: bool):
    if polar:
        body = (
            "set polar\nset angles degrees\nset size square\n"
            "plot 'sweep.csv' using 1:2 with linespoints title 'band variance'\n"
        )
    else:
        scale = "set logscale xy\n" if loglog else ""
        body = f"set xlabel '{name}'\nset ylabel 'band variance'\n{scale}plot 'sweep.csv' using 1:2 with points title 'simulation'\n"
    _write_gnuplot(r, body)


def _gnuplot_analytic(r: Runner):
    _write_gnuplot(
        r,
        "set multiplot layout 3,1\n"
        "plot 'correlator.csv' using 1:2 with lines title 'narrow line', '' using 1:3 with lines title 'full'\n"
        "plot 'modulated.csv' using 1:3 with lines title 'modulated noise'\n"
        "set logscale x\nplot 'bandwidth.csv' using 1:2 with lines title 'bandwidth scaling'\n"
        "unset multiplot\n",
    )


COMMANDS = {
    "steady-state": cmd_steady_state,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "analytic": cmd_analytic,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinnoise", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in [*COMMANDS, "run"]:
        p = sub.add_parser(name, help=f"run the {name} task" if name != "run" else "run the task named in the config")
        p.add_argument("--config", required=True, type=Path, help="scenario file (YAML)")
        p.add_argument("--seed", type=int, help="override the base noise seed")
        p.add_argument("--out", type=Path, help="override the output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for realizations")
    return parser


def _apply_overrides(sc: config.Scenario, args) -> config.Scenario:
    settings = sc.settings
    noise = sc.noise
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise config.ConfigError("--seed", "must fit in an unsigned 64-bit integer")
        noise = noise.with_seed(args.seed)
        settings = dataclasses.replace(
            settings, trajectory=dataclasses.replace(settings.trajectory, base_seed=args.seed)
        )
    if args.threads < 1:
        raise config.ConfigError("--threads", "must be >= 1")
    settings = dataclasses.replace(settings, threads=args.threads)
    out = args.out if args.out is not None else sc.output_dir
    return dataclasses.replace(sc, noise=noise, settings=settings, output_dir=Path(out))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        sc = _apply_overrides(config.load(args.config), args)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    command = sc.task if args.command == "run" else args.command
    runner = Runner(sc, command, args.config)
    t0 = time.perf_counter()
    try:
        COMMANDS[command](runner)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageFailure as exc:
        print(f"numerical failure in stage {exc.stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    runner.timings["total"] = time.perf_counter() - t0
    runner.manifest()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
