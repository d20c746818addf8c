"""Derivation of every physical parameter used by the simulator and the closed forms.

This module turns the raw input specs into SI-valued derived quantities:
sphere mass, optical coupling A, cavity linewidth, Paul-trap strength,
Epstein gas damping and the steady intracavity amplitude.

Detuning convention: the laser is red detuned from the empty cavity by Δ > 0 and
the sphere pulls the cavity towards the laser, so the effective detuning at an
on-axis antinode is Δ^x0 = Δ - A. Cooling requires Δ^x0 > 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Any

from cachetools import LRUCache, cached
from loguru import logger

from src.services.constants import (
    BOLTZMANN,
    ELEMENTARY_CHARGE,
    EPSTEIN_COEFFICIENT,
    HBAR,
    SPEED_OF_LIGHT,
    TWO_PI,
)
from src.services.errors import InvalidInputError

if TYPE_CHECKING:
    from src.models import CavitySpec, ExperimentConfig, GasSpec, PaulTrapSpec, SphereSpec

DERIVED_CACHE_SIZE = 256


@dataclass(frozen=True, slots=True)
class DerivedParams:
    """All quantities computed from the physical inputs (SI units)."""

    mass: float
    coupling_A: float
    kappa: float
    omega_T_sq: float
    gamma_M: float
    alpha_bar: complex
    photon_n: float
    mode_volume: float
    wavenumber_k: float
    omega_l: float
    waist_m: float
    charge_c: float
    detuning: float
    detuning_eff: float
    drive_amplitude: float
    omega_M: float
    x_zpf: float
    omega_d: float
    bath_temperature: float


def sphere_volume(radius: float) -> float:
    """Return (4/3)πr³."""
    return 4.0 / 3.0 * math.pi * radius**3


def clausius_mossotti(rel_permittivity: float) -> float:
    """Return the polarizability factor (ε_r - 1)/(ε_r + 2)."""
    return (rel_permittivity - 1.0) / (rel_permittivity + 2.0)


def derive_mass(sphere: SphereSpec) -> float:
    """Return the sphere mass (4/3)πr³ρ.

    Raises:
    - InvalidInputError: radius or density not strictly positive.
    """
    if not sphere.radius_m > 0 or not sphere.density_kg_m3 > 0:
        msg = f"radius and density must be positive (radius={sphere.radius_m}, density={sphere.density_kg_m3})"
        raise InvalidInputError(msg)
    return sphere_volume(sphere.radius_m) * sphere.density_kg_m3


def derive_mode_volume(cavity: CavitySpec) -> float:
    """Return the cavity mode volume πw²L."""
    return math.pi * cavity.waist_m**2 * cavity.length_m


def derive_laser_frequency(cavity: CavitySpec) -> float:
    """Return ω_l = 2πc/λ."""
    return TWO_PI * SPEED_OF_LIGHT / cavity.wavelength_m


def derive_wavenumber(cavity: CavitySpec) -> float:
    """Return k = 2π/λ."""
    return TWO_PI / cavity.wavelength_m


def derive_coupling_A(sphere: SphereSpec, cavity: CavitySpec) -> float:
    """Return the optomechanical coupling A = (3V_s/2V_m)·((ε_r-1)/(ε_r+2))·ω_l in rad/s."""
    volume_ratio = sphere_volume(sphere.radius_m) / derive_mode_volume(cavity)
    return 1.5 * volume_ratio * clausius_mossotti(sphere.rel_permittivity) * derive_laser_frequency(cavity)


def derive_kappa(cavity: CavitySpec) -> float:
    """Return the full angular linewidth κ = πc/(LF)."""
    return math.pi * SPEED_OF_LIGHT / (cavity.length_m * cavity.finesse)


def epstein_mean_speed(gas: GasSpec) -> float:
    """Return the mean thermal speed of the gas molecules, √(8k_BT/(πm_gas))."""
    return math.sqrt(8.0 * BOLTZMANN * gas.temperature_k / (math.pi * gas.molecule_mass_kg))


def derive_gas_damping(sphere: SphereSpec, gas: GasSpec) -> float:
    """Return the Epstein free-molecular damping rate γ_M = 15.8 r²P/(m v̄)."""
    mass = derive_mass(sphere)
    return EPSTEIN_COEFFICIENT * sphere.radius_m**2 * gas.pressure_pa / (mass * epstein_mean_speed(gas))


def derive_omega_T_sq(sphere: SphereSpec, paul: PaulTrapSpec) -> float:
    """Return the Paul-trap strength ω_T² = 2QV_0/(m r_0²) with Q in coulombs."""
    charge = sphere.charge_count * ELEMENTARY_CHARGE
    return 2.0 * charge * paul.voltage_v / (derive_mass(sphere) * paul.scale_m**2)


def derive_drive_amplitude(target_n: float, detuning_eff: float, kappa: float) -> float:
    """Return the pump rate 𝓔 that yields ``target_n`` photons, 𝓔 = √(n(Δ^x0² + κ²/4))."""
    if kappa <= 0:
        msg = f"kappa must be positive, got {kappa}"
        raise InvalidInputError(msg)
    return math.sqrt(target_n * (detuning_eff**2 + 0.25 * kappa**2))


def pump_rate(cavity: CavitySpec, detuning_eff: float, kappa: float) -> float:
    """Return the configured pump rate, solving for it when a photon number is given."""
    if cavity.drive_amplitude_rad_s is not None:
        return cavity.drive_amplitude_rad_s
    return derive_drive_amplitude(cavity.target_photon_n or 0.0, detuning_eff, kappa)


def steady_amplitude(drive_amplitude: float, detuning_eff: float, kappa: float) -> complex:
    """Return ᾱ = i𝓔/(iΔ^x0 - κ/2)."""
    return 1j * drive_amplitude / complex(-0.5 * kappa, detuning_eff)


def derive_alpha_bar(cavity: CavitySpec, detuning_eff: float, kappa: float) -> complex:
    """Return the steady cavity amplitude at fixed particle position.

    When the cavity spec carries a target photon number the pump rate is solved
    for first; either way photon_n is |ᾱ|² of the returned value.
    """
    if kappa <= 0:
        msg = f"kappa must be positive, got {kappa}"
        raise InvalidInputError(msg)
    return steady_amplitude(pump_rate(cavity, detuning_eff, kappa), detuning_eff, kappa)


def well_frequency(photon_n: float, coupling_A: float, wavenumber_k: float, mass: float) -> float:
    """Return the well-centre mechanical frequency from mω_M² = 2ħk²A n."""
    return math.sqrt(max(0.0, 2.0 * HBAR * wavenumber_k**2 * coupling_A * photon_n / mass))


def zero_point_amplitude(mass: float, omega: float) -> float:
    """Return x_zpf = √(ħ/(2mω)), or 0 for a non-positive frequency."""
    if omega <= 0:
        return 0.0
    return math.sqrt(HBAR / (2.0 * mass * omega))


@cached(cache=LRUCache(maxsize=DERIVED_CACHE_SIZE))
def derive_params(sphere: SphereSpec, cavity: CavitySpec, paul: PaulTrapSpec, gas: GasSpec) -> DerivedParams:
    """Assemble every derived quantity.

    Parameters:
    - sphere, cavity, paul, gas: Validated input specs.

    Returns:
    - A DerivedParams record; photon_n is |alpha_bar|² exactly.
    """
    mass = derive_mass(sphere)
    coupling = derive_coupling_A(sphere, cavity)
    kappa = derive_kappa(cavity)
    k = derive_wavenumber(cavity)

    if cavity.detuning_reference == "effective":
        detuning_eff = cavity.detuning_rad_s
        detuning = detuning_eff + coupling
    else:
        detuning = cavity.detuning_rad_s
        detuning_eff = detuning - coupling

    pump = pump_rate(cavity, detuning_eff, kappa)
    alpha_bar = steady_amplitude(pump, detuning_eff, kappa)
    photon_n = abs(alpha_bar) ** 2
    omega_M = well_frequency(photon_n, coupling, k, mass)

    params = DerivedParams(
        mass=mass,
        coupling_A=coupling,
        kappa=kappa,
        omega_T_sq=derive_omega_T_sq(sphere, paul),
        gamma_M=derive_gas_damping(sphere, gas),
        alpha_bar=alpha_bar,
        photon_n=photon_n,
        mode_volume=derive_mode_volume(cavity),
        wavenumber_k=k,
        omega_l=derive_laser_frequency(cavity),
        waist_m=cavity.waist_m,
        charge_c=sphere.charge_count * ELEMENTARY_CHARGE,
        detuning=detuning,
        detuning_eff=detuning_eff,
        drive_amplitude=pump,
        omega_M=omega_M,
        x_zpf=zero_point_amplitude(mass, omega_M),
        omega_d=paul.drive_freq_rad_s,
        bath_temperature=gas.temperature_k,
    )
    logger.debug(
        "Derived params: m={:.4e} kg, A/2π={:.3f} kHz, κ/2π={:.3f} kHz, n={:.4e}, ω_M/2π={:.3f} kHz",
        mass,
        coupling / TWO_PI / 1e3,
        kappa / TWO_PI / 1e3,
        photon_n,
        omega_M / TWO_PI / 1e3,
    )
    return params


def derive_from_config(config: ExperimentConfig) -> DerivedParams:
    """Derive parameters for a full experiment config."""
    return derive_params(config.sphere, config.cavity, config.paul, config.gas)


def to_flat_dict(params: DerivedParams) -> dict[str, Any]:
    """Flatten DerivedParams to SI floats, splitting complex values into ``_re``/``_im``."""
    flat: dict[str, Any] = {}
    for key, value in asdict(params).items():
        if isinstance(value, complex):
            flat[f"{key}_re"] = value.real
            flat[f"{key}_im"] = value.imag
        else:
            flat[key] = float(value)
    return flat
