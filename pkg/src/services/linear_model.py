"""Closed-form layer around a trapped optical well.

Covers linearization about a well (couplings G1/G2, well frequency, Duffing term),
the drive-induced excursion of the equilibrium point, the optomechanical cooling
rate, the cavity-shifted secular frequency and steady-state temperature estimates.
Also provides a Floquet (monodromy) computation of the Mathieu secular frequency
used as an independent check of the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np
from cachetools import LRUCache, cached
from scipy.integrate import solve_ivp
from scipy.special import j0

from src.services.constants import BOLTZMANN, HBAR
from src.services.errors import InvalidInputError, NotAWellError, UndefinedEquilibriumError
from src.services.params import zero_point_amplitude

if TYPE_CHECKING:
    from collections.abc import Iterable

    from src.models import PaulTrapSpec
    from src.services.params import DerivedParams

PEAK_DRIVE_PHASE = math.pi / 2
FLOQUET_RTOL = 1e-11
FLOQUET_ATOL = 1e-13
PSI_GRID_POINTS = 4097
CYCLE_SAMPLES = 512


@dataclass(frozen=True, slots=True)
class WellSite:
    """Optical well N: its antinode position Nπ/k and the Paul drive phase ω_d·t."""

    well_index: int
    equilibrium_offset: float
    drive_phase: float = PEAK_DRIVE_PHASE


@dataclass(frozen=True, slots=True)
class LinearizedModel:
    """Linear and quadratic couplings and derived rates at one equilibrium position.

    G1_max is kA|ᾱ|, the linear coupling a sphere would see at sin(2kx₀) = 1.
    """

    G1: float
    G2: float
    G1_max: float
    omega_M: float
    duffing_eps: float
    detuning_eff: float
    x_zpf: float
    g1_single: float
    g2_single: float
    gamma_opt: float
    omega_s: float


@dataclass(frozen=True, slots=True)
class CoolingRate:
    """Optical damping rate at a given sin(2kx₀) and its average over one drive period."""

    rate: float
    cycle_average: float | None = None


@dataclass(frozen=True, slots=True)
class WellScanRow:
    """Closed-form figures of merit for one optical well."""

    well_index: int
    excursion_amplitude: float
    phase_excursion: float
    coupling_ratio: float
    gamma_opt_peak: float
    gamma_opt_cycle: float
    drive_occupancy: float
    stable: bool


def well_position(well_index: int, params: DerivedParams) -> float:
    """Return the antinode position x = Nπ/k of well N."""
    if well_index < 0:
        msg = f"well index must be non-negative, got {well_index}"
        raise InvalidInputError(msg)
    return well_index * math.pi / params.wavenumber_k


def well_site(well_index: int, params: DerivedParams, drive_phase: float = PEAK_DRIVE_PHASE) -> WellSite:
    """Build the WellSite of well N at the given drive phase."""
    return WellSite(well_index, well_position(well_index, params), drive_phase)


def susceptibility(detuning_eff: float, kappa: float, omega: float) -> float:
    """Return S(ω) = 1/((Δ^x0 - ω)² + κ²/4)."""
    return 1.0 / ((detuning_eff - omega) ** 2 + 0.25 * kappa**2)


def effective_detuning(x0: float, params: DerivedParams) -> float:
    """Return Δ^x0 = Δ - A cos²(kx₀) on axis."""
    return params.detuning - params.coupling_A * math.cos(params.wavenumber_k * x0) ** 2


def secular_frequency(params: DerivedParams, paul: PaulTrapSpec, photon_n: float) -> float:
    """Return the optically shifted secular frequency.

    ω_s = (ω_d/2)·√(16ħAn/(mw²ω_d²) + 8Q²V_0²/(mω_d²r_0²)²), Q in coulombs.
    """
    m = params.mass
    omega_d = paul.drive_freq_rad_s
    optical = 16.0 * HBAR * params.coupling_A * photon_n / (m * params.waist_m**2 * omega_d**2)
    paul_term = 8.0 * params.charge_c**2 * paul.voltage_v**2 / (m * omega_d**2 * paul.scale_m**2) ** 2
    argument = optical + paul_term
    if argument < 0:
        msg = f"secular frequency undefined for negative argument {argument}"
        raise InvalidInputError(msg)
    return 0.5 * omega_d * math.sqrt(argument)


def _secular_from_params(params: DerivedParams, photon_n: float) -> float:
    # Same closed form expressed through ω_T²: ω_s² = 4ħAn/(mw²) + ω_T⁴/(2ω_d²)
    optical = 4.0 * HBAR * params.coupling_A * photon_n / (params.mass * params.waist_m**2)
    return math.sqrt(optical + params.omega_T_sq**2 / (2.0 * params.omega_d**2))


def linearize_at(x0: float, params: DerivedParams, paul: PaulTrapSpec | None = None) -> LinearizedModel:
    """Linearize the optical well about the equilibrium position x₀.

    Parameters:
    - x0: Absolute axial equilibrium position (m).
    - params: Derived parameters.
    - paul: Trap spec for the secular frequency; the ω_T² form is used when omitted.

    Returns:
    - The LinearizedModel; gamma_opt is evaluated at this position's own sin(2kx₀).

    Raises:
    - NotAWellError: cos(2kx₀) <= 0.
    """
    k = params.wavenumber_k
    phase = 2.0 * k * x0
    cos2 = math.cos(phase)
    if cos2 <= 0:
        msg = f"x0={x0:.6e} m is not inside a trapping well (cos(2kx0)={cos2:.3e})"
        raise NotAWellError(msg)
    sin2 = math.sin(phase)
    amplitude = abs(params.alpha_bar)
    g1_max = k * params.coupling_A * amplitude
    omega_M = math.sqrt(2.0 * HBAR * k**2 * params.coupling_A * params.photon_n * cos2 / params.mass)
    x_zpf = zero_point_amplitude(params.mass, omega_M)
    omega_s = (
        secular_frequency(params, paul, params.photon_n)
        if paul is not None
        else _secular_from_params(params, params.photon_n)
    )
    model = LinearizedModel(
        G1=g1_max * sin2,
        G2=k**2 * params.coupling_A * amplitude * cos2,
        G1_max=g1_max,
        omega_M=omega_M,
        duffing_eps=k * math.tan(phase),
        detuning_eff=effective_detuning(x0, params),
        x_zpf=x_zpf,
        g1_single=k * params.coupling_A * x_zpf,
        g2_single=k**2 * params.coupling_A * x_zpf**2,
        gamma_opt=0.0,
        omega_s=omega_s,
    )
    if omega_M <= 0:
        return model
    rate = cooling_rate(model, params.kappa, sin2).rate
    return replace(model, gamma_opt=rate)


def excursion_amplitude(well: WellSite, omega_T_sq: float, omega_M: float) -> float:
    """Return the peak excursion (ω_T²/ω_M²)·(Nπ/k) of the equilibrium point."""
    if omega_M <= 0:
        msg = f"omega_M must be positive, got {omega_M}"
        raise InvalidInputError(msg)
    return omega_T_sq / omega_M**2 * well.equilibrium_offset


def excursion_offset(amplitude: float, omega_d: float, t: float | np.ndarray) -> float | np.ndarray:
    """Return the drive-induced displacement x₀(t) = -amp·sin(ω_d t) of the equilibrium point."""
    return -amplitude * np.sin(omega_d * t)


def instantaneous_equilibrium(well: WellSite, amplitude: float) -> float:
    """Return the absolute equilibrium position at the well's stored drive phase."""
    return well.equilibrium_offset - amplitude * math.sin(well.drive_phase)


def phase_excursion(amplitude: float, params: DerivedParams) -> float:
    """Return the peak swing 2k·amp of the coupling phase 2kx₀."""
    return 2.0 * params.wavenumber_k * amplitude


def cycle_averaged_sin2(phase_swing: float) -> float:
    """Return ⟨sin²(φ·sin ω_d t)⟩ over one drive period, (1 - J0(2φ))/2."""
    return 0.5 * (1.0 - float(j0(2.0 * phase_swing)))


def relative_intensity(u: np.ndarray, params: DerivedParams) -> tuple[np.ndarray, np.ndarray]:
    """Return the adiabatic intensity R = |a|²/|ᾱ|² and dR/du at u = sin²(kx) off the antinode.

    Δ^x = Δ^x0 + A·u, so R = (Δ^x0² + κ²/4)/((Δ^x0 + A·u)² + κ²/4).
    """
    base = params.detuning_eff**2 + 0.25 * params.kappa**2
    shifted = params.detuning_eff + params.coupling_A * u
    ratio = base / (shifted**2 + 0.25 * params.kappa**2)
    return ratio, -2.0 * params.coupling_A * shifted * ratio**2 / base


def drive_averaged_well_frequency(params: DerivedParams, phase_swing: float, *, cavity_feedback: bool = True) -> float:
    """Return the mean oscillation frequency of a particle riding the drive excursion.

    The equilibrium phase ψ = 2kx_e solves R·sin ψ = φ·|sin ω_d t| and the local
    stiffness is ω_M²·(R cos ψ + ½R'·sin²ψ) with R the relative intracavity intensity
    (identically 1 for a frozen field). The slowly modulated oscillation runs at the
    drive-cycle mean of the local frequency; for small φ this is ω_M·(1 - φ²/8).

    Raises:
    - NotAWellError: at peak excursion the tilt exceeds the strongest optical restoring force.
    """
    if params.omega_M <= 0:
        msg = f"omega_M must be positive, got {params.omega_M}"
        raise InvalidInputError(msg)
    psi = np.linspace(0.0, 0.5 * math.pi, PSI_GRID_POINTS)
    if cavity_feedback:
        ratio, slope = relative_intensity(np.sin(0.5 * psi) ** 2, params)
    else:
        ratio, slope = np.ones_like(psi), np.zeros_like(psi)
    restoring = ratio * np.sin(psi)
    top = int(np.argmax(restoring))
    if phase_swing > restoring[top]:
        msg = f"phase swing {phase_swing:.4f} exceeds the strongest restoring force {restoring[top]:.4f}"
        raise NotAWellError(msg)

    theta = (np.arange(CYCLE_SAMPLES) + 0.5) * (0.5 * math.pi / CYCLE_SAMPLES)
    psi_eq = np.interp(phase_swing * np.sin(theta), restoring[: top + 1], psi[: top + 1])
    ratio_eq = np.interp(psi_eq, psi, ratio)
    slope_eq = np.interp(psi_eq, psi, slope)
    stiffness = ratio_eq * np.cos(psi_eq) + 0.5 * slope_eq * np.sin(psi_eq) ** 2
    if np.any(stiffness <= 0):
        msg = f"the well flattens during the drive cycle (phase swing {phase_swing:.4f})"
        raise NotAWellError(msg)
    return params.omega_M * float(np.mean(np.sqrt(stiffness)))


def cooling_rate(
    model: LinearizedModel,
    kappa: float,
    sin2kx0: float,
    phase_swing: float | None = None,
) -> CoolingRate:
    """Return the optical damping rate Γ_opt = (kA|ᾱ|·sin(2kx₀)·x_zpf)²·κ·[S(ω_M) - S(-ω_M)].

    Parameters:
    - model: Linearization supplying kA|ᾱ|, ω_M, x_zpf and Δ^x0.
    - kappa: Cavity linewidth (rad/s).
    - sin2kx0: sin(2kx₀) at which to evaluate the rate.
    - phase_swing: Peak 2k·amp of the drive excursion; when given, the drive-cycle
      average is returned too.
    """
    if model.omega_M <= 0 or kappa <= 0:
        msg = f"cooling rate needs omega_M > 0 and kappa > 0 (got {model.omega_M}, {kappa})"
        raise InvalidInputError(msg)
    s_diff = susceptibility(model.detuning_eff, kappa, model.omega_M) - susceptibility(
        model.detuning_eff, kappa, -model.omega_M
    )
    unit_rate = (model.G1_max * model.x_zpf) ** 2 * kappa * s_diff
    average = None if phase_swing is None else unit_rate * cycle_averaged_sin2(phase_swing)
    return CoolingRate(rate=unit_rate * sin2kx0**2, cycle_average=average)


@cached(cache=LRUCache(maxsize=64))
def mathieu_secular_frequency(omega_T_sq: float, omega_d: float, omega_opt_sq: float = 0.0) -> float:
    """Return the secular frequency of ÿ + (ω_opt² + ω_T² sin ω_d t)·y = 0 from Floquet theory.

    The monodromy matrix over one drive period is integrated numerically; its trace
    gives cos(ω_s T). Valid while ω_s < ω_d/2.
    """
    period = 2.0 * math.pi / omega_d

    def rhs(t: float, state: np.ndarray) -> np.ndarray:
        stiffness = omega_opt_sq + omega_T_sq * math.sin(omega_d * t)
        return np.array([state[1], -stiffness * state[0], state[3], -stiffness * state[2]])

    solution = solve_ivp(
        rhs,
        (0.0, period),
        np.array([1.0, 0.0, 0.0, 1.0]),
        method="DOP853",
        rtol=FLOQUET_RTOL,
        atol=FLOQUET_ATOL,
    )
    y1, _, _, v2 = solution.y[:, -1]
    half_trace = 0.5 * (y1 + v2)
    if abs(half_trace) >= 1.0:
        msg = f"Mathieu motion is unstable (|tr/2| = {abs(half_trace):.6f})"
        raise InvalidInputError(msg)
    return math.acos(half_trace) / period


def steady_state_temperature(gamma_M: float, gamma_opt: float, bath_temperature: float) -> tuple[float, float]:
    """Return (T_eff, T_B/T_eff) from the two-bath balance T_eff = T_B·γ_M/(γ_M + Γ_opt).

    Raises:
    - UndefinedEquilibriumError: both rates are zero.
    - InvalidInputError: a negative rate (heating) was supplied.
    """
    if gamma_M < 0 or gamma_opt < 0:
        msg = f"rates must be non-negative (gamma_M={gamma_M}, gamma_opt={gamma_opt})"
        raise InvalidInputError(msg)
    total = gamma_M + gamma_opt
    if total == 0:
        msg = "no bath couples to the particle (gamma_M = gamma_opt = 0)"
        raise UndefinedEquilibriumError(msg)
    t_eff = bath_temperature * gamma_M / total
    reduction = math.inf if t_eff == 0 else bath_temperature / t_eff
    return t_eff, reduction


def phonon_occupancy(t_eff: float, omega_M: float) -> float:
    """Return n_p = k_B T/(ħω_M) - 1/2, floored at zero."""
    if t_eff < 0 or omega_M <= 0:
        msg = f"need T_eff >= 0 and omega_M > 0 (got {t_eff}, {omega_M})"
        raise InvalidInputError(msg)
    return max(0.0, BOLTZMANN * t_eff / (HBAR * omega_M) - 0.5)


def drive_occupancy(amplitude: float, omega_M: float, mass: float) -> float:
    """Return the phonon number mω_M·amp²/(2ħ) carried by a driven excursion of the given amplitude."""
    return mass * omega_M * amplitude**2 / (2.0 * HBAR)


def well_scan(params: DerivedParams, wells: Iterable[int]) -> list[WellScanRow]:
    """Tabulate how the drive excursion, G1:G2 ratio and cooling rate vary with the well index.

    The G1:G2 ratio is |G1/(k·G2)| = |tan(2kx₀)| at the peak excursion.
    """
    centre = linearize_at(0.0, params)
    rows: list[WellScanRow] = []
    for index in wells:
        site = well_site(index, params)
        amplitude = excursion_amplitude(site, params.omega_T_sq, centre.omega_M)
        swing = phase_excursion(amplitude, params)
        rate = cooling_rate(centre, params.kappa, math.sin(swing), swing)
        rows.append(
            WellScanRow(
                well_index=index,
                excursion_amplitude=amplitude,
                phase_excursion=swing,
                coupling_ratio=abs(math.tan(swing)) if math.cos(swing) > 0 else math.inf,
                gamma_opt_peak=rate.rate,
                gamma_opt_cycle=rate.cycle_average or 0.0,
                drive_occupancy=drive_occupancy(amplitude, centre.omega_M, params.mass),
                stable=math.cos(swing) > 0,
            )
        )
    return rows
