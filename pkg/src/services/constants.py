"""Physical constants (CODATA 2018 exact/recommended values) and unit helpers.

A single frozen table used by every derivation so that results never depend on
a runtime lookup.
"""

from __future__ import annotations

import math

SPEED_OF_LIGHT = 299_792_458.0  # m/s
HBAR = 1.054571817e-34  # J s
BOLTZMANN = 1.380649e-23  # J/K
ELEMENTARY_CHARGE = 1.602176634e-19  # C
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg

N2_MOLECULE_MASS = 28.0134 * ATOMIC_MASS_UNIT

# Free-molecular drag prefactor for diffuse reflection off a sphere
EPSTEIN_COEFFICIENT = 15.8

PA_PER_MBAR = 100.0
TWO_PI = 2.0 * math.pi


def mbar_to_pa(pressure_mbar: float) -> float:
    """Convert a pressure from mbar to Pa."""
    return pressure_mbar * PA_PER_MBAR


def pa_to_mbar(pressure_pa: float) -> float:
    """Convert a pressure from Pa to mbar."""
    return pressure_pa / PA_PER_MBAR


def hz_to_rad_s(frequency_hz: float) -> float:
    """Convert an ordinary frequency to angular frequency."""
    return TWO_PI * frequency_hz


def rad_s_to_hz(omega: float) -> float:
    """Convert an angular frequency to ordinary frequency."""
    return omega / TWO_PI
