"""Cavity resonance shift versus membrane position from a 1-D transfer-matrix model.

Geometry: input mirror | vacuum gap | dielectric slab | vacuum gap | back mirror,
plane waves at normal incidence.  The tracked resonance is the longitudinal mode of
the empty cavity closest to the drive wavelength; its frequency shift is found by
solving the round-trip phase condition.

Gap phases ``k * d`` are of order 1e5 rad, which would cost ~1e-11 rad of absolute
precision in double arithmetic.  Every gap length is therefore written as an integer
number of empty-cavity node spacings plus a small remainder, and the integer part is
applied as an exact sign.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .constants import C_LIGHT, CAVITY_LENGTH, FINESSE, MEMBRANE_N_IMAG, MEMBRANE_N_REAL
from .constants import MEMBRANE_THICKNESS, WAVELENGTH
from .errors import DomainError, NumericalError

PHASE_TOLERANCE = 1e-10
_SCAN_POINTS = 65


@dataclass(frozen=True)
class MembraneSlab:
    thickness: float = MEMBRANE_THICKNESS
    n_real: float = MEMBRANE_N_REAL
    n_imag: float = MEMBRANE_N_IMAG
    z0: float = 0.0

    def __post_init__(self):
        if not self.thickness > 0:
            raise DomainError("thickness must be positive", field="thickness")
        if not self.n_real >= 1:
            raise DomainError("n_real must be >= 1", field="n_real")
        if not self.n_imag >= 0:
            raise DomainError("n_imag must be >= 0", field="n_imag")

    @property
    def index(self):
        return complex(self.n_real, self.n_imag)


@dataclass(frozen=True)
class FabryPerot:
    """Empty two-mirror cavity with identical lossless mirrors."""

    length: float = CAVITY_LENGTH
    wavelength: float = WAVELENGTH
    finesse: float = FINESSE

    def __post_init__(self):
        for name in ("length", "wavelength", "finesse"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive", field=name)
        if self.length < 10 * self.wavelength:
            raise DomainError("cavity must span many wavelengths", field="length")

    @property
    def mirror_reflectivity(self):
        return math.exp(-math.pi / (2 * self.finesse))

    @property
    def mode_index(self):
        return round(2 * self.length / self.wavelength)

    @property
    def k_mode(self):
        """Wavenumber of the tracked empty-cavity mode."""
        return math.pi * self.mode_index / self.length

    @property
    def node_spacing(self):
        return self.length / self.mode_index

    @property
    def fsr(self):
        """Angular free spectral range, rad/s."""
        return math.pi * C_LIGHT / self.length

    @property
    def empty_linewidth(self):
        """Amplitude decay rate of the empty cavity, 1/s."""
        return -C_LIGHT * math.log(self.mirror_reflectivity**2) / (2 * self.length)


@dataclass(frozen=True)
class DispersionCurve:
    z0: np.ndarray
    delta_omega: np.ndarray
    slope: np.ndarray
    curvature: np.ndarray


def _interface(n1, n2):
    r = (n1 - n2) / (n1 + n2)
    t = 2 * n1 / (n1 + n2)
    return r, t


def _slab_matrix(n, k, thickness):
    """Transfer matrix (right amplitudes -> left amplitudes) of a slab in vacuum.

    Entries are returned as a tuple (m00, m01, m10, m11) so that ``k`` may be an array.
    """
    r1, t1 = _interface(1.0, n)
    r2, t2 = _interface(n, 1.0)
    ep = np.exp(1j * n * k * thickness)
    em = 1.0 / ep
    # D(1,n) @ diag(em, ep) @ D(n,1)
    a00, a01, a10, a11 = em, r1 * ep, r1 * em, ep
    scale = 1.0 / (t1 * t2)
    m00 = (a00 + a01 * r2) * scale
    m01 = (a00 * r2 + a01) * scale
    m10 = (a10 + a11 * r2) * scale
    m11 = (a10 * r2 + a11) * scale
    return m00, m01, m10, m11


def slab_reflectivity(slab, wavelength=WAVELENGTH):
    """Amplitude reflection and transmission of a free-standing slab at normal incidence.

    Returns
    -------
    (r, t) : tuple of complex
        ``t`` includes the full propagation phase across the slab.
    """
    if not wavelength > 0:
        raise DomainError("wavelength must be positive", field="wavelength")
    k = 2 * math.pi / wavelength
    m00, _, m10, _ = _slab_matrix(slab.index, k, slab.thickness)
    return complex(m10 / m00), complex(1.0 / m00)


def _gap_phase(j, remainder, x, k, spacing):
    """exp(i k d) for d = j * spacing + remainder, with k = k_mode + x."""
    sign = -1.0 if j % 2 else 1.0
    return sign * np.exp(1j * (x * (j * spacing) + k * remainder))


def _round_trip(slab, cavity, position, x):
    """Round-trip field factor for detuning x = k - k_mode (1/m).

    ``position`` is the slab center measured from the empty-cavity node nearest the
    cavity center.
    """
    x = np.asarray(x, dtype=float)
    k_mode = cavity.k_mode
    k = k_mode + x
    n_modes = cavity.mode_index
    spacing = cavity.node_spacing
    j = n_modes // 2
    half = slab.thickness / 2
    g1 = _gap_phase(j, position - half, x, k, spacing)
    g2 = _gap_phase(n_modes - j, -position - half, x, k, spacing)
    m00, m01, m10, m11 = _slab_matrix(slab.index, k, slab.thickness)
    # diag(1/g1, g1) @ slab @ diag(1/g2, g2), terminated by the back mirror.
    rho = cavity.mirror_reflectivity
    load = -rho * g2 * g2
    num = (m10 + m11 * load) * g1
    den = (m00 + m01 * load) / g1
    r_right = num / den
    return -rho * r_right


def _phase(slab, cavity, position, x):
    return np.angle(_round_trip(slab, cavity, position, x))


def bulk_offset(slab, cavity):
    """Resonance shift from the slab's optical path alone, ignoring its reflectivity.

    Solves k L + arg(t_slab(k)) - k d = pi N self-consistently.
    """
    x = 0.0
    for _ in range(50):
        k = cavity.k_mode + x
        _, t = slab_reflectivity(slab, 2 * math.pi / k)
        excess = np.angle(t) - k * slab.thickness
        # wrap relative to the thin-slab estimate so the result is continuous in n
        excess = math.remainder(excess, 2 * math.pi)
        x_new = -excess / cavity.length
        if abs(x_new - x) < 1e-15 * (1 + abs(x)):
            x = x_new
            break
        x = x_new
    return C_LIGHT * x


def _solve_resonance(slab, cavity, position):
    half_window = math.pi / (2 * cavity.length)
    centre = bulk_offset(slab, cavity) / C_LIGHT
    xs = np.linspace(centre - half_window, centre + half_window, _SCAN_POINTS)
    phases = _phase(slab, cavity, position, xs)
    crossings = np.nonzero(
        (phases[:-1] < 0) & (phases[1:] >= 0) & (phases[1:] - phases[:-1] < math.pi)
    )[0]
    if len(crossings) != 1:
        raise NumericalError(
            f"expected one resonance in [{xs[0]:.6g}, {xs[-1]:.6g}] 1/m, "
            f"found {len(crossings)} bracketing intervals"
        )
    i = crossings[0]
    lo, hi = xs[i], xs[i + 1]
    if phases[i + 1] == 0:
        return hi
    try:
        root = brentq(
            lambda x: float(_phase(slab, cavity, position, x)),
            lo,
            hi,
            xtol=1e-300,
            rtol=4 * np.finfo(float).eps,
            maxiter=200,
        )
    except (RuntimeError, ValueError) as exc:
        raise NumericalError(
            f"resonance solve failed in bracket [{lo:.17g}, {hi:.17g}] 1/m: {exc}"
        ) from exc
    residual = abs(float(_phase(slab, cavity, position, root)))
    if residual > PHASE_TOLERANCE:
        raise NumericalError(
            f"phase residual {residual:.3g} rad exceeds {PHASE_TOLERANCE} "
            f"in bracket [{lo:.17g}, {hi:.17g}]"
        )
    return root


def _shift_at(slab, cavity, position):
    return C_LIGHT * _solve_resonance(slab, cavity, position)


def _central(f, z, h):
    fp, fm, f0 = f(z + h), f(z - h), f(z)
    return (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / (h * h)


def _richardson(f, z, h):
    s1, c1 = _central(f, z, h)
    s2, c2 = _central(f, z, h / 2)
    return (4 * s2 - s1) / 3, (4 * c2 - c1) / 3


@functools.lru_cache(maxsize=64)
def node_origin(slab, cavity):
    """Slab-centre offset (from the empty-cavity node) of the resonance maximum.

    This is the z0 = 0 reference: the field node of the loaded mode, where the
    shift is extremal and its slope vanishes.
    """
    slab = _at_origin(slab)
    h = cavity.wavelength / 1e4

    def slope(p):
        return _richardson(lambda q: _shift_at(slab, cavity, q), p, h)[0]

    quarter = cavity.wavelength / 8
    try:
        return brentq(slope, -quarter, quarter, xtol=1e-18, maxiter=200)
    except ValueError as exc:
        raise NumericalError(f"no resonance extremum within +-lambda/8 of the node: {exc}") from exc


def _at_origin(slab):
    return slab if slab.z0 == 0 else MembraneSlab(slab.thickness, slab.n_real, slab.n_imag, 0.0)


def _check_position(cavity, z0):
    if not abs(z0) < cavity.length / 4:
        raise DomainError("|z0| must be smaller than a quarter of the cavity length", field="z0")


def cavity_resonance_shift(slab, cavity, z0=None):
    """Frequency shift of the tracked resonance caused by the membrane (rad/s).

    ``z0`` is the membrane displacement from the field node; when omitted,
    ``slab.z0`` is used.  The result includes the position-independent bulk offset.
    """
    z0 = slab.z0 if z0 is None else z0
    _check_position(cavity, z0)
    slab = _at_origin(slab)
    return _shift_at(slab, cavity, node_origin(slab, cavity) + z0)


def dispersion_derivatives(slab, cavity, z0=None, step=None):
    """First and second derivative of the resonance frequency w.r.t. membrane position.

    Central differences with step ``lambda / 1e4`` (default), Richardson-extrapolated
    once.  Returns ``(slope, curvature)`` in rad/(s m) and rad/(s m^2).
    """
    z0 = slab.z0 if z0 is None else z0
    _check_position(cavity, z0)
    h = cavity.wavelength / 1e4 if step is None else step
    slab = _at_origin(slab)
    origin = node_origin(slab, cavity)
    if not h > 0 or origin + z0 + h / 2 == origin + z0:
        raise NumericalError(f"finite-difference step {h!r} underflows at z0 = {z0!r}")
    return _richardson(lambda p: _shift_at(slab, cavity, p), origin + z0, h)


def dispersion_curve(slab, cavity, z_grid):
    z_grid = np.asarray(z_grid, dtype=float)
    shift = np.array([cavity_resonance_shift(slab, cavity, z) for z in z_grid])
    derivs = np.array([dispersion_derivatives(slab, cavity, z) for z in z_grid]).reshape(-1, 2)
    return DispersionCurve(z_grid, shift, derivs[:, 0], derivs[:, 1])


def arcsin_approximation(slab, cavity, z0):
    """Thin-membrane closed form (c/L) arcsin(|r| cos 2kz0), defined up to a constant."""
    r, _ = slab_reflectivity(slab, cavity.wavelength)
    k = 2 * math.pi / cavity.wavelength
    return C_LIGHT / cavity.length * np.arcsin(abs(r) * np.cos(2 * k * np.asarray(z0)))


def arcsin_slope(slab, cavity, z0):
    """Analytic derivative of :func:`arcsin_approximation`."""
    r, _ = slab_reflectivity(slab, cavity.wavelength)
    r = abs(r)
    k = 2 * math.pi / cavity.wavelength
    phase = 2 * k * np.asarray(z0)
    return -C_LIGHT / cavity.length * 2 * k * r * np.sin(phase) / np.sqrt(1 - (r * np.cos(phase)) ** 2)


def absorption_linewidth(slab, cavity, z0=None):
    """Extra amplitude decay rate (1/s) from absorption in the slab.

    Diagnostic only; the measured total decay rate is what enters the response.
    """
    z0 = slab.z0 if z0 is None else z0
    _check_position(cavity, z0)
    base = _at_origin(slab)
    position = node_origin(base, cavity) + z0
    x = _solve_resonance(base, cavity, position)
    loop = abs(complex(_round_trip(base, cavity, position, x)))
    total = -C_LIGHT * math.log(loop) / (2 * cavity.length)
    return total - cavity.empty_linewidth
