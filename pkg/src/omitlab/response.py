"""Frequency-domain response of the pumped cavity to a weak probe.

Conventions: the frame rotates at the pump frequency, the probe enters as
``s_p exp(-i Omega t)``, and the cavity fluctuation is
``A_plus exp(i Omega t) + A_minus exp(-i Omega t)``.  A positive group delay is a
delay, a negative one an advance.

Sweeps come in two flavours: ``"locked"`` keeps the probe on the cavity resonance
(Delta = Omega, both swept together); ``"fixed-delta"`` sweeps Omega at fixed Delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError, NumericalError, SingularityError

LOCKED = "locked"
FIXED_DELTA = "fixed-delta"
MODES = (LOCKED, FIXED_DELTA)

BASELINE_WIDTHS = 20.0


@dataclass(frozen=True)
class ResponsePoint:
    omega_probe_offset: float
    delta: float
    a_plus: complex
    a_minus: complex
    x_mech: complex
    a_beat: complex
    group_delay: float


@dataclass(frozen=True)
class WindowMetrics:
    """Closed-form and numerically extracted figures of merit of one window.

    ``fwhm``, ``dip_depth`` and ``tau_numeric`` are ``None`` when the system is
    unstable; so is ``gain``.
    """

    regime: str
    stable: bool
    cooperativity: float
    gamma_eff: float
    tau_t_max: float
    tau_r_max: float
    gain: float | None
    center: float | None
    dip_depth: float | None
    fwhm: float | None
    tau_numeric: float | None


def chi_eff(sys, omega, delta):
    """Mechanical susceptibility dressed by the cavity.

    Omega_m / [Omega_m_tilde^2 - w^2 - i w gamma_m - G^2 Delta Omega_m / ((kappa_T - i w)^2 + Delta^2)]
    """
    if not sys.kappa_t > 0:
        raise DomainError("kappa_t must be positive", field="kappa_t")
    omega = np.asarray(omega, dtype=float)
    kt = sys.kappa_t
    optical = sys.g**2 * delta * sys.omega_m / ((kt - 1j * omega) ** 2 + delta**2)
    denom = sys.omega_m_tilde**2 - omega**2 - 1j * omega * sys.gamma_m - optical
    if np.any(np.abs(denom) < 1e-30 * sys.omega_m**2):
        raise SingularityError("mechanical susceptibility is singular (undamped, uncoupled resonance)")
    return sys.omega_m / denom


def _probe_path(omega, delta, mode):
    omega = np.asarray(omega, dtype=float)
    if mode == LOCKED:
        return omega, omega
    if mode == FIXED_DELTA:
        if delta is None:
            raise DomainError("fixed-delta mode needs a detuning", field="delta")
        return omega, np.broadcast_to(np.asarray(delta, dtype=float), omega.shape)
    raise DomainError(f"unknown sweep mode {mode!r}; expected one of {MODES}", field="mode")


def sideband_amplitudes(sys, delta, omega, probe_amp=1.0):
    """Intracavity sideband amplitudes and mechanical amplitude.

    Returns
    -------
    a_plus, a_minus, x_mech
        ``a_minus`` oscillates with the probe (exp(-i Omega t)); ``x_mech`` is the
        exp(-i Omega t) component of the dimensionless position.
    """
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    kt = sys.kappa_t
    drive = math.sqrt(2 * sys.kappa0) * probe_amp
    lower = kt + 1j * (delta - omega)
    chi = chi_eff(sys, omega, delta)
    a_minus = drive / lower * (1 + 0.5j * sys.g**2 * chi / lower)
    x_mech = math.sqrt(sys.kappa0) * probe_amp * sys.g * chi / lower
    # upper sideband: generated only through the mechanics, so it carries conj(s_p)
    a_plus = (
        np.conj(drive / lower)
        * 0.5j
        * sys.g**2
        * np.conj(chi)
        / (kt + 1j * (delta + omega))
    )
    return a_plus, a_minus, x_mech


def _probe_phase(probe_amp):
    return 1.0 if probe_amp == 0 else abs(probe_amp) / probe_amp


def beat_amplitude(sys, delta, omega=None, probe_amp=1.0):
    """Beat between transmitted pump and probe, 2 kappa_2 alpha_s A_minus.

    The phase is referred to the probe phase.  ``omega`` defaults to ``delta``
    (probe resonant with the cavity).
    """
    omega = delta if omega is None else omega
    _, a_minus, _ = sideband_amplitudes(sys, delta, omega, probe_amp)
    return 2 * sys.kappa2 * sys.alpha_s(np.asarray(delta, dtype=float)) * a_minus * _probe_phase(probe_amp)


def beat_bracket(sys, delta):
    """1 + i G^2 chi_eff(Delta) / (2 kappa_T): interference factor at Omega = Delta."""
    return 1 + 0.5j * sys.g**2 * chi_eff(sys, delta, delta) / sys.kappa_t


def beat_on_path(sys, omega, mode=LOCKED, delta=None, probe_amp=1.0):
    om, de = _probe_path(omega, delta, mode)
    return beat_amplitude(sys, de, om, probe_amp)


def effective_damping(sys, delta):
    """gamma_m (1 + C) for red-detuned pumping, gamma_m (1 - C) for blue."""
    c = sys.cooperativity
    return sys.gamma_m * (1 + c) if delta >= 0 else sys.gamma_m * (1 - c)


def _phase_derivative(sys, omega, h, mode, delta, probe_amp):
    def beat(o):
        return beat_on_path(sys, o, mode, delta, probe_amp)

    ref = beat(omega)

    def dphi(k):
        return np.angle(beat(omega + k * h) / ref)

    return (-dphi(2) + 8 * dphi(1) - 8 * dphi(-1) + dphi(-2)) / (12 * h)


def group_delay(sys, omega, mode=LOCKED, delta=None, probe_amp=1.0, rtol=1e-3, max_halvings=40):
    """d arg(A_beat) / d Omega along the sweep path, in seconds.

    Five-point central stencil; the step starts at |gamma_eff| / 100 and is halved
    until two successive estimates agree to ``rtol``.
    """
    omega = np.asarray(omega, dtype=float)
    _probe_path(omega, delta, mode)
    ref_delta = float(np.ravel(omega)[0]) if mode == LOCKED else float(delta)
    h = abs(effective_damping(sys, ref_delta)) / 100 or sys.gamma_m / 100 or sys.kappa_t / 100
    prev = _phase_derivative(sys, omega, h, mode, delta, probe_amp)
    for _ in range(max_halvings):
        h /= 2
        cur = _phase_derivative(sys, omega, h, mode, delta, probe_amp)
        if np.all(np.abs(cur - prev) <= rtol * np.abs(cur) + 1e-15):
            return cur
        prev = cur
    raise NumericalError(f"group delay did not converge after {max_halvings} step halvings")


def spectrum_sweep(sys, grid, mode=LOCKED, delta=None, probe_amp=1.0):
    """Evaluate the response along a strictly increasing grid of probe offsets.

    Returns
    -------
    list of ResponsePoint
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise DomainError("sweep grid must be a non-empty 1-D sequence", field="grid")
    if np.any(np.diff(grid) <= 0):
        raise DomainError("sweep grid must be strictly increasing", field="grid")
    om, de = _probe_path(grid, delta, mode)
    a_plus, a_minus, x_mech = sideband_amplitudes(sys, de, om, probe_amp)
    beat = beat_amplitude(sys, de, om, probe_amp)
    tau = group_delay(sys, grid, mode, delta, probe_amp)
    return [
        ResponsePoint(float(o), float(d), complex(ap), complex(am), complex(x), complex(b), float(t))
        for o, d, ap, am, x, b, t in zip(om, de, a_plus, a_minus, x_mech, beat, tau)
    ]


def stability_check(sys, delta):
    """(stable, margin) with margin the effective mechanical damping rate."""
    margin = effective_damping(sys, delta)
    return margin > 0, margin


def tau_transmission_max(c, gamma_m):
    return -2 * c / (gamma_m * (1 + c))


def tau_reflection_max(c, gamma_m, eta):
    if c == 0:
        return 0.0  # no window; the eta = 1 form is 0/0 here
    return 2 * eta * c / (gamma_m * (1 + c) * (1 - eta + c))


def window_center(sys, regime, mode=LOCKED, delta=None):
    """Probe offset of the transparency minimum (red) or gain maximum (blue)."""
    sign = 1.0 if regime == "red" else -1.0
    width = abs(effective_damping(sys, sign))
    nominal = sign * sys.omega_m_tilde

    def objective(o):
        power = abs(complex(beat_on_path(sys, o, mode, delta))) ** 2
        return power if regime == "red" else -power

    res = minimize_scalar(
        objective,
        bounds=(nominal - 3 * width, nominal + 3 * width),
        method="bounded",
        options={"xatol": width * 1e-9, "maxiter": 500},
    )
    return float(res.x)


def _half_width(sys, center, level, direction, span, mode, delta):
    def f(o):
        return abs(complex(beat_on_path(sys, o, mode, delta))) ** 2 - level

    # first crossing walking outward; the far wing may cross back when gamma_eff ~ kappa_T
    start = np.sign(f(center))
    inner = center
    for off in np.geomspace(1e-4, 1.0, 241) * span:
        outer = center + direction * off
        if np.sign(f(outer)) != start:
            return abs(brentq(f, inner, outer, xtol=1e-12 * span) - center)
        inner = outer
    raise NumericalError("window edge not bracketed inside the baseline span")


def window_metrics(sys, regime=None, mode=LOCKED, delta=None):
    """Closed-form delay/gain figures plus numerically extracted window shape.

    The FWHM is taken on the beat power |A_beat|^2, halfway between its extremum and
    the baseline at ``center +- 20 gamma_eff``.
    """
    if regime is None:
        regime = "red" if (delta if mode == FIXED_DELTA else 1.0) >= 0 else "blue"
    if regime not in ("red", "blue"):
        raise DomainError("regime must be 'red' or 'blue'", field="regime")
    sign = 1.0 if regime == "red" else -1.0
    c = sys.cooperativity
    stable, gamma_eff = stability_check(sys, sign)
    tau_t = tau_transmission_max(c, sys.gamma_m)
    tau_r = tau_reflection_max(c, sys.gamma_m, sys.eta)
    if not stable:
        return WindowMetrics(regime, False, c, gamma_eff, tau_t, tau_r, None, None, None, None, None)
    gain = sys.eta_prime / (1 + c) if regime == "red" else sys.eta_prime / (1 - c)
    if c == 0:
        return WindowMetrics(regime, True, c, gamma_eff, tau_t, tau_r, gain, None, None, None, 0.0)
    center = window_center(sys, regime, mode, delta)
    span = BASELINE_WIDTHS * gamma_eff
    ext = abs(complex(beat_on_path(sys, center, mode, delta)))
    base = 0.5 * sum(abs(complex(beat_on_path(sys, center + s * span, mode, delta))) for s in (-1, 1))
    level = 0.5 * (ext**2 + base**2)
    fwhm = sum(_half_width(sys, center, level, d, span, mode, delta) for d in (-1, 1))
    tau = float(group_delay(sys, center, mode, delta))
    return WindowMetrics(regime, True, c, gamma_eff, tau_t, tau_r, gain, center, ext / base, fwhm, tau)
