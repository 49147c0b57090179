"""Physical constants (CODATA 2018 exact/recommended values) and the reference device parameters."""

import math

HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23  # J/K
C_LIGHT = 299_792_458.0  # m/s

TWO_PI = 2.0 * math.pi

WAVELENGTH = 1.064e-6  # m, Nd:YAG
OMEGA_M = TWO_PI * 355.6e3  # rad/s, fundamental drum mode
Q_HIGH_VACUUM = 122_000.0
Q_LOW_VACUUM = 24_000.0
EFFECTIVE_MASS = 45e-12  # kg (45 ng)
KAPPA_T = 8.5e4  # 1/s, total amplitude decay rate
CAVITY_LENGTH = 0.093  # m
FINESSE = 60_000.0
MEMBRANE_THICKNESS = 50e-9  # m
MEMBRANE_N_REAL = 2.0
MEMBRANE_N_IMAG = 2e-6


def laser_angular_frequency(wavelength=WAVELENGTH):
    return TWO_PI * C_LIGHT / wavelength
