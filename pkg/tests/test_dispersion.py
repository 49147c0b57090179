import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omitlab.constants import C_LIGHT, WAVELENGTH
from omitlab.dispersion import (
    FabryPerot,
    MembraneSlab,
    absorption_linewidth,
    arcsin_approximation,
    arcsin_slope,
    bulk_offset,
    cavity_resonance_shift,
    dispersion_curve,
    dispersion_derivatives,
    slab_reflectivity,
)
from omitlab.errors import DomainError

MEMBRANE = MembraneSlab()
CAVITY = FabryPerot()
HALF = WAVELENGTH / 2


def shift(z, slab=MEMBRANE):
    return cavity_resonance_shift(slab, CAVITY, z)


def test_half_wave_slab_is_transparent():
    slab = MembraneSlab(thickness=WAVELENGTH / (2 * 2.0), n_real=2.0, n_imag=0.0)
    r, t = slab_reflectivity(slab)
    assert abs(r) < 1e-12
    assert abs(t) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("thickness", [1e-9, 50e-9, 333e-9])
def test_index_matched_slab_does_not_reflect(thickness):
    r, t = slab_reflectivity(MembraneSlab(thickness=thickness, n_real=1.0, n_imag=0.0))
    assert abs(r) < 1e-15
    assert abs(t) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=40)
@given(st.floats(5e-9, 500e-9), st.floats(1.0, 3.5), st.floats(0.0, 1e-2))
def test_energy_balance(thickness, n_real, n_imag):
    r, t = slab_reflectivity(MembraneSlab(thickness, n_real, n_imag))
    total = abs(r) ** 2 + abs(t) ** 2
    assert total <= 1 + 1e-12
    if n_imag == 0:
        assert total == pytest.approx(1.0, abs=1e-12)


def test_absorption_matches_energy_deficit():
    lossy = MembraneSlab(n_imag=1e-3)
    r, t = slab_reflectivity(lossy)
    deficit = 1 - abs(r) ** 2 - abs(t) ** 2
    assert deficit > 0
    # weak absorption: deficit scales linearly with n_imag
    r2, t2 = slab_reflectivity(MembraneSlab(n_imag=2e-3))
    assert (1 - abs(r2) ** 2 - abs(t2) ** 2) / deficit == pytest.approx(2.0, rel=1e-2)


@pytest.mark.xfail(strict=True, reason="nominal 50 nm, n = 2 slab gives |r|^2 = 0.148, 17.5% below 0.18")
def test_nominal_membrane_misses_quoted_reflectivity():
    r, _ = slab_reflectivity(MEMBRANE)
    assert abs(r) ** 2 == pytest.approx(0.18, rel=0.15)


def test_nominal_membrane_reflectivity_value():
    r, _ = slab_reflectivity(MEMBRANE)
    assert abs(r) ** 2 == pytest.approx(0.1485, abs=5e-4)
    # a slightly thicker film reaches the quoted intensity reflectivity
    r57, _ = slab_reflectivity(MembraneSlab(thickness=57.1e-9))
    assert abs(r57) ** 2 == pytest.approx(0.18, rel=0.01)


def test_transparent_membrane_gives_flat_shift():
    # half-wave at the loaded resonance, which the slab's optical path itself moves
    slab = MembraneSlab(thickness=WAVELENGTH / 4.0, n_real=2.0, n_imag=0.0)
    for _ in range(5):
        k_res = CAVITY.k_mode + bulk_offset(slab, CAVITY) / C_LIGHT
        slab = MembraneSlab(thickness=math.pi / (2.0 * k_res), n_real=2.0, n_imag=0.0)
    offset = bulk_offset(slab, CAVITY)
    for z in np.linspace(-HALF / 2, HALF / 2, 9):
        assert abs(cavity_resonance_shift(slab, CAVITY, z) - offset) < 1e-6 * CAVITY.fsr


def test_periodic_over_half_wavelength():
    for z in np.linspace(0, HALF, 7):
        assert abs(shift(z + HALF) - shift(z)) < 1e-6 * CAVITY.fsr


@settings(max_examples=10, deadline=None)
@given(st.floats(-HALF, HALF))
def test_exactly_periodic_in_resonant_wavelength(z):
    # the period is pi / k of the loaded resonance itself
    d0 = shift(z)
    period = math.pi / (CAVITY.k_mode + d0 / C_LIGHT)
    amplitude = abs(shift(HALF / 2) - shift(0.0))
    assert abs(shift(z + period) - d0) < 1e-9 * amplitude


def test_node_is_extremum():
    slope0, curv0 = dispersion_derivatives(MEMBRANE, CAVITY, 0.0)
    grid = np.linspace(0, HALF, 41)
    slopes = np.array([dispersion_derivatives(MEMBRANE, CAVITY, z)[0] for z in grid])
    assert abs(slope0) < 1e-4 * np.max(np.abs(slopes))
    for z in (5e-9, 15e-9, -5e-9):
        assert abs(curv0) > abs(dispersion_derivatives(MEMBRANE, CAVITY, z)[1])


def test_symmetry_about_node():
    for z in (3e-9, 12e-9, 40e-9):
        sp, cp = dispersion_derivatives(MEMBRANE, CAVITY, z)
        sm, cm = dispersion_derivatives(MEMBRANE, CAVITY, -z)
        assert sm == pytest.approx(-sp, rel=1e-6)
        assert cm == pytest.approx(cp, rel=1e-6)
        # unequal sub-cavity lengths leave a tiny odd term (about 2e-10 at 40 nm)
        assert shift(-z) == pytest.approx(shift(z), rel=1e-9)


def test_slope_ratios_track_coupling_sequence():
    start = time.perf_counter()
    slopes = [abs(dispersion_derivatives(MEMBRANE, CAVITY, z * 1e-9)[0]) for z in (5, 7, 15, 21)]
    elapsed = time.perf_counter() - start
    ratios = np.array(slopes) / slopes[0]
    assert np.allclose(ratios, [1.0, 1.4, 3.0, 4.2], rtol=0.08)
    assert np.allclose(ratios, [1.0, 1.4, 3.1, 4.2], rtol=0.08)
    assert elapsed < 5


def test_matches_arcsin_approximation():
    z = np.linspace(0, HALF, 41)
    exact = np.array([shift(v) for v in z])
    approx = arcsin_approximation(MEMBRANE, CAVITY, z)
    amplitude = exact.max() - exact.min()
    diff = (exact - exact.mean()) - (approx - approx.mean())
    assert np.max(np.abs(diff)) < 0.02 * amplitude


def test_slope_matches_analytic_derivative():
    for z in (5e-9, 21e-9, 60e-9, 100e-9):
        numeric = dispersion_derivatives(MEMBRANE, CAVITY, z)[0]
        assert numeric == pytest.approx(float(arcsin_slope(MEMBRANE, CAVITY, z)), rel=1e-3)


def test_near_node_linearity():
    grid = np.linspace(2e-9, WAVELENGTH / 40, 8)
    per_nm = np.array([abs(dispersion_derivatives(MEMBRANE, CAVITY, z)[0]) / z for z in grid])
    assert np.max(np.abs(per_nm / per_nm[0] - 1)) < 0.03


@pytest.mark.parametrize("z", [0.0, 7e-9, 21e-9, 90e-9])
def test_step_halving_converges(z):
    h = WAVELENGTH / 1e4
    s1, c1 = dispersion_derivatives(MEMBRANE, CAVITY, z, step=h)
    s2, c2 = dispersion_derivatives(MEMBRANE, CAVITY, z, step=h / 2)
    slope_scale = abs(dispersion_derivatives(MEMBRANE, CAVITY, 21e-9)[0])
    assert abs(s2 - s1) < 1e-4 * max(abs(s1), slope_scale)
    assert abs(c2 - c1) < 1e-4 * abs(c1)


def test_position_limit():
    with pytest.raises(DomainError):
        shift(CAVITY.length / 4)


def test_curve_columns():
    z = np.linspace(0, 25e-9, 6)
    curve = dispersion_curve(MEMBRANE, CAVITY, z)
    assert curve.delta_omega.shape == curve.slope.shape == curve.curvature.shape == z.shape
    assert curve.delta_omega[0] == pytest.approx(shift(0.0))


def test_absorption_diagnostic_grows_towards_antinode():
    at_node = absorption_linewidth(MEMBRANE, CAVITY, 0.0)
    at_antinode = absorption_linewidth(MEMBRANE, CAVITY, WAVELENGTH / 4)
    assert 0 < at_node < at_antinode
    assert at_antinode < 0.1 * CAVITY.empty_linewidth
