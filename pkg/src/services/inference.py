"""Inversion of the closed forms: photon number from ω_M, charge from ω_s, cooling rate from decays.

All inversions assume the particle sits at a well centre (cos(2kx₀) = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger

from src.models import FrequencyObservation, InferenceResult
from src.services.constants import ELEMENTARY_CHARGE, HBAR, TWO_PI
from src.services.errors import InconsistentObservationError, InsufficientDataError, InvalidInputError
from src.services.linear_model import secular_frequency
from src.services.params import well_frequency
from src.services.spectral import DEFAULT_PEAK_SNR, drive_split_centers, noise_floor, sideband_decay_rate

if TYPE_CHECKING:
    from src.models import PaulTrapSpec
    from src.services.params import DerivedParams
    from src.services.spectral import DecayFit, ExpectedLines, PowerSpectrum, Spectrogram

Z_95 = 1.959963984540054
# Discriminant slack in units of its propagated standard deviation
DISCRIMINANT_SIGMAS = 3.0
DISCRIMINANT_RELATIVE_FLOOR = 1e-9
LARGE_RESIDUAL = 0.25
PEAK_SEARCH_FRACTION = 0.3


@dataclass(frozen=True, slots=True)
class CoolingRateFit:
    """Energy decay rate combined over the linear features, with the per-feature fits.

    ``quadratic_ratio`` is the mean rate of the quadratic features divided by the
    estimate (2 for a thermal-amplitude decay), or None when none was detected.
    """

    gamma_opt: float
    gamma_opt_stderr: float
    features: tuple[DecayFit, ...]
    quadratic_features: tuple[DecayFit, ...] = ()
    quadratic_ratio: float | None = None


def infer_photon_number(omega_M: float, params: DerivedParams) -> float:
    """Return n = mω_M²/(2ħk²A).

    Raises:
    - InvalidInputError: negative frequency or vanishing coupling.
    """
    if omega_M < 0:
        msg = f"omega_M must be non-negative, got {omega_M}"
        raise InvalidInputError(msg)
    if params.coupling_A <= 0:
        msg = "photon number is undefined without optical coupling (A = 0)"
        raise InvalidInputError(msg)
    return params.mass * omega_M**2 / (2.0 * HBAR * params.wavenumber_k**2 * params.coupling_A)


def forward_frequencies(
    photon_n: float,
    charge_count: int,
    params: DerivedParams,
    paul: PaulTrapSpec,
) -> FrequencyObservation:
    """Return the (ω_M, ω_s) pair predicted for a photon number and a charge."""
    charged = replace(params, charge_c=charge_count * ELEMENTARY_CHARGE)
    return FrequencyObservation(
        omega_M=well_frequency(photon_n, params.coupling_A, params.wavenumber_k, params.mass),
        omega_s=secular_frequency(charged, paul, photon_n),
    )


def _charge_from_discriminant(discriminant: float, scale: float) -> float:
    return math.sqrt(max(0.0, discriminant) * scale)


def infer_charge(obs: FrequencyObservation, params: DerivedParams, paul: PaulTrapSpec) -> InferenceResult:
    """Recover photon number and charge from a measured (ω_M, ω_s) pair.

    The optically shifted secular formula is solved for Q²:
    Q² = [(2ω_s/ω_d)² - 16ħAn/(mw²ω_d²)]·(mω_d²r_0²)²/(8V_0²).

    Parameters:
    - obs: Measured frequencies with one-sigma uncertainties.
    - params: Derived parameters of the particle and cavity.
    - paul: Trap drive and geometry.

    Returns:
    - InferenceResult with the nearest integer charge and 95% intervals.

    Raises:
    - InconsistentObservationError: ω_s lies below the optical-only floor by more
      than three propagated standard deviations.
    """
    n = infer_photon_number(obs.omega_M, params)
    m = params.mass
    omega_d = paul.drive_freq_rad_s
    per_photon = 16.0 * HBAR * params.coupling_A / (m * params.waist_m**2 * omega_d**2)
    observed = (2.0 * obs.omega_s / omega_d) ** 2
    discriminant = observed - per_photon * n

    sigma_n = m * obs.omega_M * obs.omega_M_uncertainty / (HBAR * params.wavenumber_k**2 * params.coupling_A)
    sigma_d = math.hypot(8.0 * obs.omega_s * obs.omega_s_uncertainty / omega_d**2, per_photon * sigma_n)
    tolerance = max(DISCRIMINANT_SIGMAS * sigma_d, DISCRIMINANT_RELATIVE_FLOOR * observed)

    flags: list[str] = []
    if discriminant < -tolerance:
        msg = (
            f"omega_s={obs.omega_s:.6g} rad/s lies below the optical floor for n={n:.4e} "
            f"(discriminant {discriminant:.3e}, tolerance {tolerance:.3e})"
        )
        raise InconsistentObservationError(msg)
    if discriminant < 0:
        discriminant = 0.0
        flags.append("clamped-discriminant")

    scale = (m * omega_d**2 * paul.scale_m**2) ** 2 / (8.0 * paul.voltage_v**2)
    charge = _charge_from_discriminant(discriminant, scale)
    continuous = charge / ELEMENTARY_CHARGE
    count = round(continuous)
    residual = abs(continuous - count)
    if count == 0:
        flags.append("charge-zero")
    if residual > LARGE_RESIDUAL:
        flags.append("large-residual")

    half_d = Z_95 * sigma_d
    charge_interval = (
        _charge_from_discriminant(discriminant - half_d, scale) / ELEMENTARY_CHARGE,
        _charge_from_discriminant(discriminant + half_d, scale) / ELEMENTARY_CHARGE,
    )
    n_interval = (max(0.0, n - Z_95 * sigma_n), n + Z_95 * sigma_n)
    logger.debug("Inferred n={:.6e}, Q={:.4f} e (flags: {})", n, continuous, flags or "none")
    return InferenceResult(
        photon_n=n,
        photon_n_interval=n_interval,
        charge_count=count,
        charge_coulomb=charge,
        charge_interval=charge_interval,
        residual=residual,
        branch_flags=flags,
    )


def _strongest_in_band(spec: PowerSpectrum, center_hz: float, snr: float) -> float | None:
    band = np.flatnonzero(np.abs(spec.frequencies - center_hz) <= PEAK_SEARCH_FRACTION * center_hz)
    if center_hz <= 0 or band.size == 0:
        return None
    best = band[np.argmax(spec.psd[band])]
    if spec.psd[best] < snr * noise_floor(spec):
        return None
    return float(spec.frequencies[best])


def extract_observation(
    spec: PowerSpectrum,
    predicted_omega_M: float,
    predicted_omega_s: float,
    *,
    snr: float = DEFAULT_PEAK_SNR,
) -> FrequencyObservation:
    """Read ω_M and ω_s off a spectrum, searching ±30% around the predictions.

    The secular line is taken at its fundamental when present, otherwise from its
    second harmonic (the detector sees radial motion quadratically). Uncertainties
    are one frequency bin.

    Raises:
    - InsufficientDataError: either line is missing.
    """
    mech_hz = _strongest_in_band(spec, predicted_omega_M / TWO_PI, snr)
    if mech_hz is None:
        msg = f"no mechanical line near {predicted_omega_M / TWO_PI:.1f} Hz"
        raise InsufficientDataError(msg)
    secular_hz = _strongest_in_band(spec, predicted_omega_s / TWO_PI, snr)
    if secular_hz is None:
        doubled = _strongest_in_band(spec, 2.0 * predicted_omega_s / TWO_PI, snr)
        if doubled is None:
            msg = f"no secular line near {predicted_omega_s / TWO_PI:.1f} Hz or its second harmonic"
            raise InsufficientDataError(msg)
        secular_hz = 0.5 * doubled
    uncertainty = TWO_PI * spec.resolution
    return FrequencyObservation(
        omega_M=TWO_PI * mech_hz,
        omega_s=TWO_PI * secular_hz,
        omega_M_uncertainty=uncertainty,
        omega_s_uncertainty=uncertainty,
    )


def _decay_fits(
    gram: Spectrogram,
    features: list[tuple[str, float]],
    snr: float,
) -> list[DecayFit]:
    fits = []
    top = float(gram.frequencies[-1])
    for kind, center in features:
        if not 0 < center < top:
            continue
        try:
            fits.append(sideband_decay_rate(gram, kind, center, snr=snr))
        except InsufficientDataError as exc:
            logger.debug("Skipping {} at {:.1f} Hz: {}", kind, center, exc)
    return fits


def fit_cooling_rate(gram: Spectrogram, expected: ExpectedLines, *, snr: float = DEFAULT_PEAK_SNR) -> CoolingRateFit:
    """Estimate Γ_opt from the decay of the features linear in the displacement.

    Linear-sideband and ω_M power is proportional to the oscillation energy, so its
    decay rate is the energy damping rate. The ±ω_d satellites of Ω ± ω_M count as
    linear features; far from the trap center they carry most of that power. The estimate is the inverse-variance mean
    over the detected linear features. Quadratic features (Ω±2ω_M, 2ω_M) follow the
    square of the energy and are reported as a ratio to the estimate.

    Raises:
    - InsufficientDataError: no linear feature is detected in five windows.
    """
    het, mech = expected.het_hz, expected.mech_hz
    satellites = [
        ("drive_split", center) for _, label, center in drive_split_centers(expected) if label.startswith("Omega")
    ]
    linear = _decay_fits(
        gram,
        [("linear_sideband", het - mech), ("linear_sideband", het + mech), ("direct_1f", mech), *satellites],
        snr,
    )
    if not linear:
        msg = "no linear feature was detected in enough spectrogram windows"
        raise InsufficientDataError(msg)
    rates = np.array([f.rate for f in linear])
    stderrs = np.array([f.rate_stderr for f in linear])
    floor = max(1e-12 * float(np.max(np.abs(rates))), np.finfo(float).tiny)
    weights = 1.0 / np.maximum(np.where(np.isfinite(stderrs), stderrs, np.inf), floor) ** 2
    if not np.any(weights > 0):
        weights = np.ones_like(rates)
    estimate = float(np.average(rates, weights=weights))
    stderr = float(1.0 / math.sqrt(np.sum(weights)))

    quadratic = _decay_fits(
        gram,
        [("quadratic_sideband", het - 2 * mech), ("quadratic_sideband", het + 2 * mech), ("direct_2f", 2 * mech)],
        snr,
    )
    ratio = None
    if quadratic and estimate != 0:
        ratio = float(np.mean([f.rate for f in quadratic]) / estimate)
    logger.info(
        "Cooling rate {:.4g} ± {:.2g} s⁻¹ from {} linear feature(s){}",
        estimate,
        stderr,
        len(linear),
        "" if ratio is None else f", quadratic/linear ratio {ratio:.3f}",
    )
    return CoolingRateFit(estimate, stderr, tuple(linear), tuple(quadratic), ratio)
