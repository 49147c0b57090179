"""Physical parameters and derived scalar quantities of the membrane-in-the-middle cavity.

All rates (kappa, gamma, G, Delta, Omega) are angular and expressed in rad/s.
Every type here is an immutable value object.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import HBAR, K_B, laser_angular_frequency
from .errors import DomainError

WEAK_PROBE_RATIO = 1e-2


def _require_positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite, got {value!r}", field=name)


@dataclass(frozen=True)
class MechanicalMode:
    """Fundamental vibrational mode of the membrane."""

    omega_m: float
    q_factor: float
    gamma_m: float
    mass: float
    overlap_theta: float
    x0: float

    def __post_init__(self):
        _require_positive("omega_m", self.omega_m)
        _require_positive("q_factor", self.q_factor)
        _require_positive("mass", self.mass)
        if not 0 < self.overlap_theta <= 1:
            raise DomainError(
                f"overlap_theta must lie in (0, 1], got {self.overlap_theta!r}",
                field="overlap_theta",
            )
        if self.gamma_m != self.omega_m / self.q_factor:
            raise DomainError("gamma_m must equal omega_m / q_factor", field="gamma_m")
        if self.x0 != math.sqrt(HBAR / (self.mass * self.omega_m)):
            raise DomainError("x0 must equal sqrt(hbar / (mass omega_m))", field="x0")


def derive_mechanics(omega_m, q_factor, mass, overlap_theta=1.0):
    """Build a :class:`MechanicalMode`, deriving the damping rate and zero-point length.

    Raises
    ------
    DomainError
        If any input is non-positive; ``err.field`` names it.
    """
    for name, value in (
        ("omega_m", omega_m),
        ("q_factor", q_factor),
        ("mass", mass),
        ("overlap_theta", overlap_theta),
    ):
        _require_positive(name, value)
    return MechanicalMode(
        omega_m=float(omega_m),
        q_factor=float(q_factor),
        gamma_m=omega_m / q_factor,
        mass=float(mass),
        overlap_theta=float(overlap_theta),
        x0=math.sqrt(HBAR / (mass * omega_m)),
    )


@dataclass(frozen=True)
class CavityOptics:
    """Cavity decay channels and the pump carrier.

    ``kappa0`` is the input (pumped) mirror, ``kappa2`` the back mirror through which
    the beat is detected.
    """

    kappa0: float
    kappa2: float
    omega_laser: float = field(default_factory=laser_angular_frequency)
    cavity_length: float = 0.093

    def __post_init__(self):
        _require_positive("kappa0", self.kappa0)
        _require_positive("kappa2", self.kappa2)
        _require_positive("omega_laser", self.omega_laser)
        _require_positive("cavity_length", self.cavity_length)

    @classmethod
    def from_total(cls, kappa_t, input_fraction=0.5, **kwargs):
        """Split a total decay rate between the two mirrors."""
        _require_positive("kappa_t", kappa_t)
        if not 0 < input_fraction < 1:
            raise DomainError("input_fraction must lie in (0, 1)", field="input_fraction")
        return cls(kappa0=kappa_t * input_fraction, kappa2=kappa_t * (1 - input_fraction), **kwargs)

    @property
    def kappa_t(self):
        return self.kappa0 + self.kappa2

    @property
    def eta(self):
        return 2 * self.kappa0 / self.kappa_t

    @property
    def eta_prime(self):
        return 2 * math.sqrt(self.kappa0 * self.kappa2) / self.kappa_t


@dataclass(frozen=True)
class DriveConfig:
    """Pump and probe settings.

    ``probe_offset`` defaults to ``delta``: the probe kept resonant with the cavity.
    """

    pump_power: float
    delta: float
    probe_amp: complex = 1.0
    probe_offset: float | None = None
    omega_laser: float = field(default_factory=laser_angular_frequency)

    def __post_init__(self):
        if not self.pump_power >= 0:
            raise DomainError("pump_power must be >= 0", field="pump_power")
        if self.probe_offset is None:
            object.__setattr__(self, "probe_offset", float(self.delta))
        probe_power = abs(self.probe_amp) ** 2 * HBAR * self.omega_laser
        if self.pump_power > 0 and probe_power > WEAK_PROBE_RATIO * self.pump_power:
            warnings.warn(
                f"probe power {probe_power:.3g} W is not weak compared with the pump "
                f"({self.pump_power:.3g} W)",
                stacklevel=2,
            )

    @property
    def locked(self):
        return self.probe_offset == self.delta


def intracavity_amplitude(pump_power, kappa0, kappa_t, delta, omega_laser):
    """Steady intracavity amplitude alpha_s (real, sqrt(photons))."""
    return np.sqrt(2 * kappa0 * pump_power / (HBAR * omega_laser)) / np.hypot(kappa_t, delta)


@dataclass(frozen=True)
class DerivedCoupling:
    alpha_s: float
    g_coupling: float
    h_shift: float
    omega_m_tilde: float
    cooperativity: float


def steady_state(mechanics, optics, drive, dispersion_slope, dispersion_curvature=0.0):
    """Linearization point and effective couplings.

    Parameters
    ----------
    mechanics : MechanicalMode
    optics : CavityOptics
    drive : DriveConfig
    dispersion_slope : float
        d omega / d z0 at the membrane position, rad/(s m).
    dispersion_curvature : float
        d^2 omega / d z0^2, rad/(s m^2).

    Returns
    -------
    DerivedCoupling
    """
    kappa_t = optics.kappa_t
    alpha_s = intracavity_amplitude(
        drive.pump_power, optics.kappa0, kappa_t, drive.delta, optics.omega_laser
    )
    length_scale = mechanics.x0 * mechanics.overlap_theta
    g = (
        -2.0
        * dispersion_slope
        * mechanics.overlap_theta
        * math.sqrt(
            drive.pump_power
            * optics.kappa0
            / (mechanics.mass * mechanics.omega_m * optics.omega_laser * (kappa_t**2 + drive.delta**2))
        )
    )
    h = dispersion_curvature * length_scale**2 * alpha_s**2
    omega_tilde_sq = mechanics.omega_m**2 + h * mechanics.omega_m
    if omega_tilde_sq <= 0:
        raise DomainError("second-order shift drives the mechanical frequency negative", field="h_shift")
    return DerivedCoupling(
        alpha_s=float(alpha_s),
        g_coupling=g,
        h_shift=h,
        omega_m_tilde=math.sqrt(omega_tilde_sq),
        cooperativity=g**2 / (2 * kappa_t * mechanics.gamma_m),
    )


def cooperativity(g, kappa_t, gamma_m):
    return g**2 / (2 * kappa_t * gamma_m)


def coupling_for_cooperativity(c, kappa_t, gamma_m):
    """Positive G that yields cooperativity ``c``."""
    return math.sqrt(2 * kappa_t * gamma_m * c)


@dataclass(frozen=True)
class ThermalEnvironment:
    temperature: float
    n_th: float


def bose_occupancy(omega, temperature):
    x = HBAR * omega / (K_B * temperature)
    if x > 700:
        return 0.0
    return 1.0 / math.expm1(x)


def thermal_occupancy(temperature, mechanics):
    _require_positive("temperature", temperature)
    return ThermalEnvironment(temperature, bose_occupancy(mechanics.omega_m, temperature))


def quantum_storage_margin(env, coupling):
    """C / n_th; values above 1 mean quantum states outlive thermal decoherence.

    Returns ``math.inf`` when the mode is in its ground state (``n_th == 0``).
    """
    if env.n_th == 0:
        return math.inf
    return coupling.cooperativity / env.n_th


@dataclass(frozen=True)
class OptomechSystem:
    """The scalar inputs of the frequency-domain response.

    ``g`` is held fixed across a sweep; the Delta-dependence of the pump build-up enters
    only through :meth:`alpha_s`, as in the beat-amplitude formula.
    """

    omega_m: float
    gamma_m: float
    kappa0: float
    kappa2: float
    g: float
    h: float = 0.0
    pump_power: float = 1e-3
    omega_laser: float = field(default_factory=laser_angular_frequency)

    def __post_init__(self):
        _require_positive("omega_m", self.omega_m)
        if not self.gamma_m >= 0:
            raise DomainError("gamma_m must be >= 0", field="gamma_m")
        _require_positive("kappa0", self.kappa0)
        if not self.kappa2 >= 0:
            raise DomainError("kappa2 must be >= 0", field="kappa2")
        if self.omega_m**2 + self.h * self.omega_m <= 0:
            raise DomainError("second-order shift drives the mechanical frequency negative", field="h")

    @classmethod
    def from_parts(cls, mechanics, optics, coupling, pump_power):
        return cls(
            omega_m=mechanics.omega_m,
            gamma_m=mechanics.gamma_m,
            kappa0=optics.kappa0,
            kappa2=optics.kappa2,
            g=coupling.g_coupling,
            h=coupling.h_shift,
            pump_power=pump_power,
            omega_laser=optics.omega_laser,
        )

    @classmethod
    def with_cooperativity(cls, c, *, omega_m, q_factor, kappa_t, input_fraction=0.5, **kwargs):
        """Convenience constructor parametrized by cooperativity and quality factor."""
        gamma_m = omega_m / q_factor
        return cls(
            omega_m=omega_m,
            gamma_m=gamma_m,
            kappa0=kappa_t * input_fraction,
            kappa2=kappa_t * (1 - input_fraction),
            g=coupling_for_cooperativity(c, kappa_t, gamma_m),
            **kwargs,
        )

    def replace(self, **changes):
        return replace(self, **changes)

    @property
    def kappa_t(self):
        return self.kappa0 + self.kappa2

    @property
    def omega_m_tilde(self):
        return math.sqrt(self.omega_m**2 + self.h * self.omega_m)

    @property
    def cooperativity(self):
        return cooperativity(self.g, self.kappa_t, self.gamma_m)

    @property
    def eta(self):
        return 2 * self.kappa0 / self.kappa_t

    @property
    def eta_prime(self):
        return 2 * math.sqrt(self.kappa0 * self.kappa2) / self.kappa_t

    def alpha_s(self, delta):
        return intracavity_amplitude(self.pump_power, self.kappa0, self.kappa_t, delta, self.omega_laser)
