"""Run configuration: one JSON document fully specifies a run.

Human-facing frequencies are in Hz (``frequency_hz``, sweep bounds as Omega/2pi);
decay rates and detunings stay angular (rad/s), like the rest of the package.
"""

import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import constants as K
from .dispersion import FabryPerot, MembraneSlab, dispersion_derivatives
from .errors import DomainError
from .model import CavityOptics, DriveConfig, OptomechSystem, coupling_for_cooperativity, derive_mechanics, steady_state
from .response import FIXED_DELTA, LOCKED, MODES

BUNDLED_DIR = Path(__file__).with_name("configs")
FIT_PARAMS = ("g", "kappa_t", "gamma_m", "scale", "phase", "omega_m")


@dataclass
class Mechanics:
    frequency_hz: float = K.OMEGA_M / K.TWO_PI
    q_factor: float = K.Q_HIGH_VACUUM
    mass_kg: float = K.EFFECTIVE_MASS
    overlap_theta: float = 1.0


@dataclass
class Optics:
    kappa_t: float = K.KAPPA_T
    input_fraction: float = 0.5
    wavelength_m: float = K.WAVELENGTH
    cavity_length_m: float = K.CAVITY_LENGTH
    finesse: float = K.FINESSE


@dataclass
class Membrane:
    thickness_m: float = K.MEMBRANE_THICKNESS
    n_real: float = K.MEMBRANE_N_REAL
    n_imag: float = K.MEMBRANE_N_IMAG
    z0_m: float = 0.0


@dataclass
class Drive:
    """``detuning`` (rad/s) defaults to +Omega_m (red) or -Omega_m (blue)."""

    pump_power_w: float = 1e-3
    sideband: str = "red"
    detuning: float | None = None
    probe_amp: float = 1.0


@dataclass
class Coupling:
    """``source`` is "fixed" (give exactly one of ``g_over_omega_m`` or ``cooperativity``)
    or "dispersion" (G and h follow from the membrane position and the pump)."""

    source: str = "fixed"
    g_over_omega_m: float | None = None
    cooperativity: float | None = None
    h_shift: float = 0.0


@dataclass
class Sweep:
    start_hz: float = 355.55e3
    stop_hz: float = 355.65e3
    count: int = 201
    mode: str = LOCKED


@dataclass
class DispersionGrid:
    start_m: float = 0.0
    stop_m: float = 25e-9
    count: int = 26


@dataclass
class Oracle:
    """``q_surrogate`` replaces the quality factor for time-domain runs; a coupling given
    as a cooperativity keeps that cooperativity.  ``t_end_s`` is the total integration
    time (default: settling plus the demodulation window)."""

    q_surrogate: float | None = None
    dt_s: float | None = None
    t_end_s: float | None = None


@dataclass
class Fit:
    free: list[str] = field(default_factory=lambda: ["g", "gamma_m", "scale", "phase"])
    restarts: int = 1


@dataclass
class Output:
    directory: str = "."
    stem: str | None = None


@dataclass
class RunConfig:
    mechanics: Mechanics = field(default_factory=Mechanics)
    optics: Optics = field(default_factory=Optics)
    membrane: Membrane = field(default_factory=Membrane)
    drive: Drive = field(default_factory=Drive)
    coupling: Coupling = field(default_factory=Coupling)
    sweep: Sweep = field(default_factory=Sweep)
    dispersion: DispersionGrid = field(default_factory=DispersionGrid)
    oracle: Oracle = field(default_factory=Oracle)
    fit: Fit = field(default_factory=Fit)
    output: Output = field(default_factory=Output)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def replace(self, section, **changes):
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


def _check_value(value, hint, where):
    origin = typing.get_origin(hint)
    if origin in (types.UnionType, typing.Union):
        if value is None and type(None) in typing.get_args(hint):
            return None
        inner = [a for a in typing.get_args(hint) if a is not type(None)][0]
        return _check_value(value, inner, where)
    if origin is list:
        (inner,) = typing.get_args(hint)
        if not isinstance(value, list):
            raise DomainError(f"{where}: expected a list", field=where)
        return [_check_value(v, inner, f"{where}[{i}]") for i, v in enumerate(value)]
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DomainError(f"{where}: expected a number, got {value!r}", field=where)
        if not math.isfinite(value):
            raise DomainError(f"{where}: must be finite", field=where)
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise DomainError(f"{where}: expected an integer, got {value!r}", field=where)
        return value
    if hint is str:
        if not isinstance(value, str):
            raise DomainError(f"{where}: expected a string, got {value!r}", field=where)
        return value
    raise TypeError(hint)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise DomainError(f"{where or 'config'}: expected an object", field=where or "config")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        key = f"{where}.{unknown[0]}" if where else unknown[0]
        raise DomainError(f"{key}: unknown key", field=key)
    kwargs = {}
    for name in names & set(data):
        key = f"{where}.{name}" if where else name
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, data[name], key)
        else:
            kwargs[name] = _check_value(data[name], hint, key)
    return cls(**kwargs)


def _positive(value, key):
    if not value > 0:
        raise DomainError(f"{key}: must be positive, got {value!r}", field=key)


def validate(cfg):
    """Range checks beyond the types; raises DomainError naming the offending field."""
    m, o, mem, d, c = cfg.mechanics, cfg.optics, cfg.membrane, cfg.drive, cfg.coupling
    _positive(m.frequency_hz, "mechanics.frequency_hz")
    _positive(m.q_factor, "mechanics.q_factor")
    _positive(m.mass_kg, "mechanics.mass_kg")
    if not 0 < m.overlap_theta <= 1:
        raise DomainError("mechanics.overlap_theta: must lie in (0, 1]", field="mechanics.overlap_theta")
    _positive(o.kappa_t, "optics.kappa_t")
    if not 0 < o.input_fraction < 1:
        raise DomainError("optics.input_fraction: must lie in (0, 1)", field="optics.input_fraction")
    for name in ("wavelength_m", "cavity_length_m", "finesse"):
        _positive(getattr(o, name), f"optics.{name}")
    _positive(mem.thickness_m, "membrane.thickness_m")
    if mem.n_real < 1 or mem.n_imag < 0:
        raise DomainError("membrane: need n_real >= 1 and n_imag >= 0", field="membrane.n_real")
    if d.pump_power_w < 0:
        raise DomainError("drive.pump_power_w: must be >= 0", field="drive.pump_power_w")
    if d.sideband not in ("red", "blue"):
        raise DomainError("drive.sideband: must be 'red' or 'blue'", field="drive.sideband")
    if c.source not in ("fixed", "dispersion"):
        raise DomainError("coupling.source: must be 'fixed' or 'dispersion'", field="coupling.source")
    if c.source == "fixed" and (c.g_over_omega_m is None) == (c.cooperativity is None):
        raise DomainError(
            "coupling: give exactly one of g_over_omega_m or cooperativity", field="coupling.g_over_omega_m"
        )
    if c.cooperativity is not None and c.cooperativity < 0:
        raise DomainError("coupling.cooperativity: must be >= 0", field="coupling.cooperativity")
    if cfg.sweep.mode not in MODES:
        raise DomainError(f"sweep.mode: must be one of {MODES}", field="sweep.mode")
    for section in ("sweep", "dispersion"):
        grid = getattr(cfg, section)
        if grid.count < 1:
            raise DomainError(f"{section}.count: must be >= 1", field=f"{section}.count")
    if cfg.sweep.count > 1 and not cfg.sweep.stop_hz > cfg.sweep.start_hz:
        raise DomainError("sweep.stop_hz: must exceed start_hz", field="sweep.stop_hz")
    if cfg.dispersion.count > 1 and not cfg.dispersion.stop_m > cfg.dispersion.start_m:
        raise DomainError("dispersion.stop_m: must exceed start_m", field="dispersion.stop_m")
    for name in ("q_surrogate", "dt_s", "t_end_s"):
        value = getattr(cfg.oracle, name)
        if value is not None:
            _positive(value, f"oracle.{name}")
    bad = sorted(set(cfg.fit.free) - set(FIT_PARAMS))
    if bad:
        raise DomainError(f"fit.free: unknown parameter {bad[0]!r}", field="fit.free")
    if cfg.fit.restarts < 1 or cfg.fit.restarts > 5:
        raise DomainError("fit.restarts: must lie in 1..5", field="fit.restarts")
    return cfg


def from_dict(data):
    if isinstance(data, dict) and "run_record" in data:
        data = data["config"]
    return validate(_build(RunConfig, data, ""))


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise DomainError(f"config is not valid JSON: {err}", field="config") from None
    return from_dict(data)


def resolve_path(path):
    """A filesystem path, or the name of a bundled example (``fig2`` or ``fig2.json``)."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.suffix == ".json" else p.name + ".json"
    bundled = BUNDLED_DIR / name
    if str(p.parent) == "." and bundled.exists():
        return bundled
    raise DomainError(f"config file {path} not found", field="config")


def load(path):
    """Parse a config file (or a run record, whose embedded config is used)."""
    p = resolve_path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise DomainError(f"cannot read config {path}: {err}", field="config") from None
    return loads(text)


def bundled_names():
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.json"))


# -- physics assembly -----------------------------------------------------------


def omega_m(cfg):
    return K.TWO_PI * cfg.mechanics.frequency_hz


def detuning(cfg):
    if cfg.drive.detuning is not None:
        return cfg.drive.detuning
    return omega_m(cfg) if cfg.drive.sideband == "red" else -omega_m(cfg)


def cavity(cfg):
    return FabryPerot(cfg.optics.cavity_length_m, cfg.optics.wavelength_m, cfg.optics.finesse)


def membrane(cfg):
    m = cfg.membrane
    return MembraneSlab(m.thickness_m, m.n_real, m.n_imag, 0.0)


def build_system(cfg, q_factor=None):
    """OptomechSystem for the configured run; ``q_factor`` overrides the quality factor."""
    q = cfg.mechanics.q_factor if q_factor is None else q_factor
    mech = derive_mechanics(omega_m(cfg), q, cfg.mechanics.mass_kg, cfg.mechanics.overlap_theta)
    optics = CavityOptics.from_total(
        cfg.optics.kappa_t,
        cfg.optics.input_fraction,
        omega_laser=K.laser_angular_frequency(cfg.optics.wavelength_m),
        cavity_length=cfg.optics.cavity_length_m,
    )
    c = cfg.coupling
    if c.source == "dispersion":
        slope, curvature = dispersion_derivatives(membrane(cfg), cavity(cfg), cfg.membrane.z0_m)
        drive = DriveConfig(cfg.drive.pump_power_w, detuning(cfg), omega_laser=optics.omega_laser)
        derived = steady_state(mech, optics, drive, slope, curvature)
        g, h = derived.g_coupling, derived.h_shift
    else:
        if c.g_over_omega_m is not None:
            g = c.g_over_omega_m * mech.omega_m
        else:
            g = coupling_for_cooperativity(c.cooperativity, optics.kappa_t, mech.gamma_m)
        h = c.h_shift
    return OptomechSystem.from_parts(mech, optics, _Coupling(g, h), cfg.drive.pump_power_w)


@dataclass(frozen=True)
class _Coupling:
    g_coupling: float
    h_shift: float


def sweep_grid(cfg):
    """Angular probe offsets Omega (rad/s) of the configured sweep."""
    s = cfg.sweep
    hz = np.array([s.start_hz]) if s.count == 1 else np.linspace(s.start_hz, s.stop_hz, s.count)
    return K.TWO_PI * hz


def sweep_delta(cfg):
    return detuning(cfg) if cfg.sweep.mode == FIXED_DELTA else None


def dispersion_grid(cfg):
    g = cfg.dispersion
    return np.array([g.start_m]) if g.count == 1 else np.linspace(g.start_m, g.stop_m, g.count)
