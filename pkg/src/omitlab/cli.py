"""Command-line entry point: ``omitlab respond | dispersion | oracle | fit | version``.

Exit codes: 0 success, 2 input error, 3 physics/stability failure, 4 numerical
non-convergence.  Every command writes its CSV/report plus a ``<stem>.run.json`` run
record holding the effective config and the sha256 of each output; feeding that record
back through ``--config`` reproduces the outputs byte for byte.
"""

import argparse
import csv
import datetime
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .dispersion import dispersion_curve
from .errors import DomainError, NumericalError
from .fit import PARAMS, FitContext, SpectrumData, fit_spectrum, initial_guess
from .oracle import oracle_sweep
from .response import spectrum_sweep, stability_check

EXIT_OK, EXIT_INPUT, EXIT_PHYSICS, EXIT_NUMERIC = 0, 2, 3, 4
ORACLE_TOLERANCE = 1e-3
THREADS_ENV = "OMITLAB_THREADS"

RESPOND_COLUMNS = ("omega_over_2pi_hz", "beat_modulus", "beat_phase_rad", "group_delay_s")
DISPERSION_COLUMNS = ("z0_m", "delta_omega_rad_s", "slope", "curvature")
ORACLE_COLUMNS = (
    "omega_over_2pi_hz",
    "analytic_re",
    "analytic_im",
    "oracle_re",
    "oracle_im",
    "relative_deviation",
    "diverged",
)


class PhysicsFailure(Exception):
    pass


def worker_count():
    """CPU count, capped by OMITLAB_THREADS when set."""
    n = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return n
    try:
        cap = int(raw)
    except ValueError:
        raise DomainError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", field=THREADS_ENV) from None
    if cap < 1:
        raise DomainError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", field=THREADS_ENV)
    return min(n, cap)


def format_number(value):
    """Fixed 17-significant-digit scientific notation, independent of locale."""
    return format(float(value), ".16e")


def write_csv(path, header, columns):
    rows = [",".join(header)]
    for values in zip(*columns):
        rows.append(",".join(v if isinstance(v, str) else format_number(v) for v in values))
    Path(path).write_bytes(("\n".join(rows) + "\n").encode("utf-8"))


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_record(path, command, cfg, outputs, inputs=None):
    record = {
        "run_record": 1,
        "command": command,
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "config": cfg.to_dict(),
        "inputs": {str(p): sha256(p) for p in inputs or ()},
        "outputs": {str(p): sha256(p) for p in outputs},
    }
    Path(path).write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    return record


# -- commands ---------------------------------------------------------------------


def cmd_respond(cfg, out, figure=None):
    sys_ = cfgmod.build_system(cfg)
    delta = cfgmod.detuning(cfg)
    stable, margin = stability_check(sys_, delta)
    if not stable:
        raise PhysicsFailure(f"pumping is unstable (effective damping {margin:.3g} 1/s <= 0)")
    grid = cfgmod.sweep_grid(cfg)
    points = spectrum_sweep(sys_, grid, cfg.sweep.mode, cfgmod.sweep_delta(cfg), cfg.drive.probe_amp)
    beat = np.array([p.a_beat for p in points])
    freq = grid / (2 * math.pi)
    write_csv(out, RESPOND_COLUMNS, (freq, np.abs(beat), np.angle(beat), [p.group_delay for p in points]))
    outputs = [out]
    if figure:
        from .plotting import spectrum_figure

        spectrum_figure(figure, freq, np.abs(beat), np.angle(beat))
        outputs.append(figure)
    return outputs


def cmd_dispersion(cfg, out, figure=None):
    z = cfgmod.dispersion_grid(cfg)
    curve = dispersion_curve(cfgmod.membrane(cfg), cfgmod.cavity(cfg), z)
    write_csv(out, DISPERSION_COLUMNS, (curve.z0, curve.delta_omega, curve.slope, curve.curvature))
    outputs = [out]
    if figure:
        from .plotting import dispersion_figure

        dispersion_figure(figure, curve.z0, curve.delta_omega, curve.slope)
        outputs.append(figure)
    return outputs


def oracle_system(cfg):
    q = cfg.oracle.q_surrogate
    return cfgmod.build_system(cfg, q_factor=q)


def cmd_oracle(cfg, out, figure=None, workers=1):
    """Returns ``(outputs, max_deviation)``; raises PhysicsFailure if every point diverged."""
    sys_ = oracle_system(cfg)
    grid = cfgmod.sweep_grid(cfg)
    delta = cfgmod.sweep_delta(cfg)
    mode = cfg.sweep.mode
    amp = cfg.drive.probe_amp
    numeric = oracle_sweep(
        sys_, grid, mode, delta, amp, dt=cfg.oracle.dt_s, workers=workers, t_end=cfg.oracle.t_end_s
    )
    diverged = np.array([r.diverged for r in numeric])
    if diverged.all():
        analytic = np.full(grid.size, complex(np.nan, np.nan))
    else:
        analytic = np.array([p.a_beat for p in spectrum_sweep(sys_, grid, mode, delta, amp)])
    num = np.array([r.beat_complex for r in numeric])
    dev = np.where(diverged, np.nan, np.abs(num - analytic) / np.abs(analytic))
    freq = grid / (2 * math.pi)
    write_csv(
        out,
        ORACLE_COLUMNS,
        (freq, analytic.real, analytic.imag, num.real, num.imag, dev, [str(int(d)) for d in diverged]),
    )
    report = Path(out).with_suffix(".txt")
    ok = ~diverged
    max_dev = float(np.max(dev[ok])) if ok.any() else math.nan
    lines = [
        f"points: {grid.size}",
        f"diverged: {int(diverged.sum())}",
        f"max_relative_deviation: {format_number(max_dev)}",
        f"tolerance: {format_number(ORACLE_TOLERANCE)}",
        f"pass: {str(bool(ok.any() and max_dev < ORACLE_TOLERANCE)).lower()}",
    ]
    report.write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs = [out, report]
    if figure and ok.any():
        from .plotting import oracle_figure

        oracle_figure(figure, freq, analytic, num)
        outputs.append(figure)
    if not ok.any():
        raise PhysicsFailure("every grid point diverged (unstable pumping)", outputs)
    return outputs, max_dev


def read_spectrum(path, cfg):
    """Spectrum CSV with columns omega_over_2pi_hz, beat_modulus and optionally
    beat_phase_rad, sigma."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as err:
        raise DomainError(f"cannot read spectrum {path}: {err}", field="spectrum") from None
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise DomainError(f"spectrum {path} has no data rows", field="spectrum")
    header = [h.strip() for h in rows[0]]
    for need in ("omega_over_2pi_hz", "beat_modulus"):
        if need not in header:
            raise DomainError(f"spectrum {path} lacks column {need!r}", field="spectrum")
    if any(len(r) != len(header) for r in rows[1:]):
        raise DomainError(f"spectrum {path}: rows do not match the header", field="spectrum")
    try:
        table = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as err:
        raise DomainError(f"spectrum {path}: {err}", field="spectrum") from None
    col = {name: table[:, i] for i, name in enumerate(header)}
    return SpectrumData(
        detuning=2 * math.pi * col["omega_over_2pi_hz"],
        modulus=col["beat_modulus"],
        phase=col.get("beat_phase_rad"),
        sigma=col.get("sigma"),
        mode=cfg.sweep.mode,
        delta=cfgmod.sweep_delta(cfg),
    )


def cmd_fit(cfg, spectrum, out):
    """Returns ``(outputs, FitResult)``."""
    data = read_spectrum(spectrum, cfg)
    sys_ = cfgmod.build_system(cfg)
    guess = initial_guess(data, gamma_m=sys_.gamma_m, kappa_t=sys_.kappa_t)
    guess.pop("branch")
    guess["omega_m"] = sys_.omega_m
    context = FitContext(cfg.optics.input_fraction, sys_.h)
    result = fit_spectrum(data, guess, tuple(cfg.fit.free), context, cfg.fit.restarts)
    kv = Path(out).with_suffix(".kv")
    pairs = [("converged", str(result.converged).lower()), ("iterations", str(result.iterations))]
    pairs.append(("reduced_chi2", format_number(result.reduced_chi2)))
    pairs.append(("free", ",".join(result.free)))
    pairs.append(("g_over_omega_m", format_number(result.g_abs / result.params["omega_m"])))
    for name in PARAMS:
        pairs.append((name, format_number(result.params[name])))
        if result.uncertainties is not None and name in result.uncertainties:
            pairs.append((f"{name}_sigma", format_number(result.uncertainties[name])))
    kv.write_text("".join(f"{k}={v}\n" for k, v in pairs), encoding="utf-8")
    lines = [f"fit of {spectrum} ({data.detuning.size} points, mode {data.mode})"]
    lines.append(f"converged: {result.converged} after {result.iterations} iterations")
    lines.append(f"reduced chi-square: {result.reduced_chi2:.6g}")
    for name in PARAMS:
        value = result.params[name]
        tag = "free" if name in result.free else "fixed"
        if result.uncertainties is not None and name in result.uncertainties:
            lines.append(f"  {name:8s} = {value:.10g} +- {result.uncertainties[name]:.3g}  ({tag})")
        else:
            lines.append(f"  {name:8s} = {value:.10g}  ({tag})")
    lines.append(f"  |G|/Omega_m = {result.g_abs / result.params['omega_m']:.6g}")
    if result.uncertainties is None:
        lines.append("uncertainties unavailable: curvature matrix is singular")
    else:
        lines.append("uncertainties: 1-sigma from the local curvature (J^T J)^-1 at the optimum")
    Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [out, kv], result


# -- argument handling ------------------------------------------------------------

COMMANDS = {
    "respond": "analytic beat spectrum (modulus, phase, group delay) over the sweep grid",
    "dispersion": "cavity resonance shift and its z0-derivatives over the dispersion grid",
    "oracle": "time-domain integration versus the analytic spectrum on the sweep grid",
    "fit": "least-squares fit of a measured spectrum CSV",
    "version": "print the toolkit version",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="omitlab",
        description="Optomechanically induced transparency and amplification toolkit.",
        epilog=(
            f"exit codes: 0 success, 2 input error, 3 physics/stability failure, "
            f"4 numerical non-convergence. {THREADS_ENV} caps the worker count. "
            f"Bundled configs: {', '.join(cfgmod.bundled_names())}."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        if name == "version":
            continue
        p.add_argument("--config", required=True, metavar="PATH", help="JSON run config, run record, or bundled name")
        p.add_argument("--out", metavar="PATH", help="primary output file (default: <output.directory>/<stem>)")
        if name == "fit":
            p.add_argument("spectrum", metavar="SPECTRUM", help="CSV with omega_over_2pi_hz,beat_modulus[,beat_phase_rad][,sigma]")
        else:
            unit = "m" if name == "dispersion" else "Hz, Omega/2pi"
            p.add_argument("--grid-start", type=float, metavar="X", help=f"grid start override ({unit})")
            p.add_argument("--grid-stop", type=float, metavar="X", help=f"grid stop override ({unit})")
            p.add_argument("--grid-count", type=int, metavar="N", help="grid point count override")
            p.add_argument("--figure", metavar="PATH", help="also render a figure (needs matplotlib)")
        if name != "dispersion":
            p.add_argument("--mode", choices=("locked", "fixed-delta"), help="sweep mode override")
    return parser


def apply_overrides(cfg, args):
    section, keys = ("dispersion", ("start_m", "stop_m")) if args.command == "dispersion" else ("sweep", ("start_hz", "stop_hz"))
    changes = {}
    if getattr(args, "grid_start", None) is not None:
        changes[keys[0]] = args.grid_start
    if getattr(args, "grid_stop", None) is not None:
        changes[keys[1]] = args.grid_stop
    if getattr(args, "grid_count", None) is not None:
        changes["count"] = args.grid_count
    if changes:
        cfg = cfg.replace(section, **changes)
    if getattr(args, "mode", None):
        cfg = cfg.replace("sweep", mode=args.mode)
    return cfgmod.validate(cfg)


def default_out(cfg, args):
    stem = cfg.output.stem or Path(args.config).stem
    if stem.endswith(".run"):
        stem = stem[: -len(".run")]
    suffix = {"respond": ".csv", "dispersion": "_dispersion.csv", "oracle": "_oracle.csv", "fit": "_fit.txt"}
    return Path(cfg.output.directory) / (stem + suffix[args.command])


def record_path(out):
    out = Path(out)
    return out.with_name(out.stem + ".run.json")


def run(args):
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    cfg = apply_overrides(cfgmod.load(args.config), args)
    out = Path(args.out) if args.out else default_out(cfg, args)
    out.parent.mkdir(parents=True, exist_ok=True)
    code = EXIT_OK
    inputs = None
    try:
        if args.command == "respond":
            outputs = cmd_respond(cfg, out, args.figure)
        elif args.command == "dispersion":
            outputs = cmd_dispersion(cfg, out, args.figure)
        elif args.command == "oracle":
            outputs, max_dev = cmd_oracle(cfg, out, args.figure, worker_count())
            print(f"max relative deviation {max_dev:.3e} (tolerance {ORACLE_TOLERANCE:g})")
            if not max_dev < ORACLE_TOLERANCE:
                code = EXIT_NUMERIC
        else:
            inputs = [args.spectrum]
            outputs, result = cmd_fit(cfg, args.spectrum, out)
            if not result.converged:
                print("fit did not converge", file=sys.stderr)
                code = EXIT_NUMERIC
    except PhysicsFailure as err:
        written = err.args[1] if len(err.args) > 1 else []
        if written:
            write_record(record_path(out), args.command, cfg, written)
        print(f"error: {err.args[0]}", file=sys.stderr)
        return EXIT_PHYSICS
    write_record(record_path(out), args.command, cfg, outputs, inputs)
    print(out)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
