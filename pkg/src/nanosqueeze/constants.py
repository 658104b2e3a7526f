"""Physical constants (CODATA values via scipy) and unit helpers."""

import numpy as np
from scipy import constants as _sc

C = _sc.c
HBAR = _sc.hbar
EPS0 = _sc.epsilon_0
NM = 1e-9
EV = _sc.electron_volt / _sc.hbar  # rad/s per eV

#: Transition dipole used when an absolute scale is needed (1 e*nm-ish, ~48 debye).
DEFAULT_DIPOLE_CM = 1.6e-28


def omega_from_wavelength(lambda_nm):
    """Angular frequency [rad/s] of a vacuum wavelength given in nm."""
    return 2 * np.pi * C / (np.asarray(lambda_nm, dtype=float) * NM)


def wavelength_from_omega(omega):
    """Vacuum wavelength [nm] of an angular frequency [rad/s]."""
    return 2 * np.pi * C / np.asarray(omega, dtype=float) / NM


def free_space_decay_rate(omega, dipole=DEFAULT_DIPOLE_CM):
    """gamma_0 = omega^3 |d|^2 / (3 pi eps0 hbar c^3)."""
    return omega**3 * dipole**2 / (3 * np.pi * EPS0 * HBAR * C**3)
