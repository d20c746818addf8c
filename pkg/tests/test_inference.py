"""Tests for photon-number, charge and cooling-rate inference."""

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.models import CavitySpec, ExperimentConfig, FrequencyObservation, GasSpec, PaulTrapSpec, SphereSpec
from src.services.constants import ELEMENTARY_CHARGE, TWO_PI
from src.services.errors import InconsistentObservationError, InsufficientDataError, InvalidInputError
from src.services.inference import (
    extract_observation,
    fit_cooling_rate,
    forward_frequencies,
    infer_charge,
    infer_photon_number,
)
from src.services.params import DerivedParams, derive_params
from src.services.spectral import ExpectedLines, PowerSpectrum, TimeSeries, spectrogram

N_40KHZ = 3.899029e9
RATE = 1e6


def test_photon_number_from_well_frequency(default_params: DerivedParams) -> None:
    """Verify ω_M/2π = 40 kHz inverts to n ≈ 3.899e9 and n scales as ω_M²."""
    n = infer_photon_number(TWO_PI * 40e3, default_params)
    assert n == pytest.approx(N_40KHZ, rel=1e-5)
    assert infer_photon_number(TWO_PI * 80e3, default_params) == pytest.approx(4 * n, rel=1e-12)
    assert infer_photon_number(0.0, default_params) == 0.0


def test_photon_number_rejects_bad_input(default_params: DerivedParams) -> None:  # noqa: D103
    with pytest.raises(InvalidInputError):
        infer_photon_number(-1.0, default_params)
    with pytest.raises(InvalidInputError, match="A = 0"):
        infer_photon_number(1.0, replace(default_params, coupling_A=0.0))


@settings(max_examples=60, deadline=None)
@given(
    log_n=st.floats(min_value=6.0, max_value=11.0),
    charge=st.integers(min_value=0, max_value=5),
)
def test_forward_then_inverse_round_trip(log_n: float, charge: int) -> None:
    """Verify infer_charge inverts forward_frequencies for any photon number and charge."""
    paul = PaulTrapSpec()
    params = derive_params(SphereSpec(), CavitySpec(target_photon_n=N_40KHZ), paul, GasSpec())
    obs = forward_frequencies(10**log_n, charge, params, paul)
    result = infer_charge(obs, params, paul)
    assert result.photon_n == pytest.approx(10**log_n, rel=1e-9)
    assert result.charge_count == charge
    if charge > 0:
        assert result.charge_coulomb == pytest.approx(charge * ELEMENTARY_CHARGE, rel=1e-6)
    else:
        assert "charge-zero" in result.branch_flags
    assert result.residual < 1e-3


def test_charge_is_monotonic_in_secular_frequency(
    default_config: ExperimentConfig, default_params: DerivedParams
) -> None:
    """Verify a higher secular frequency never infers a smaller charge."""
    base = forward_frequencies(N_40KHZ, 1, default_params, default_config.paul)
    observations = [base.model_copy(update={"omega_s": base.omega_s * f}) for f in (1.0, 1.001, 1.01, 1.05)]
    charges = [infer_charge(obs, default_params, default_config.paul).charge_coulomb for obs in observations]
    assert charges == sorted(charges)


def test_secular_frequency_below_optical_floor_is_inconsistent(
    default_config: ExperimentConfig, default_params: DerivedParams
) -> None:
    """Verify ω_s ten sigma below the uncharged prediction raises InconsistentObservationError."""
    floor = forward_frequencies(N_40KHZ, 0, default_params, default_config.paul)
    sigma = 1e-3 * floor.omega_s
    obs = FrequencyObservation(omega_M=floor.omega_M, omega_s=floor.omega_s - 10 * sigma, omega_s_uncertainty=sigma)
    with pytest.raises(InconsistentObservationError):
        infer_charge(obs, default_params, default_config.paul)


def test_slightly_low_secular_frequency_is_clamped(
    default_config: ExperimentConfig, default_params: DerivedParams
) -> None:
    """Verify a discriminant just below zero but within tolerance is clamped to Q = 0."""
    floor = forward_frequencies(N_40KHZ, 0, default_params, default_config.paul)
    sigma = 1e-3 * floor.omega_s
    obs = FrequencyObservation(omega_M=floor.omega_M, omega_s=floor.omega_s - sigma, omega_s_uncertainty=sigma)
    result = infer_charge(obs, default_params, default_config.paul)
    assert result.charge_count == 0
    assert result.charge_coulomb == 0.0
    assert {"clamped-discriminant", "charge-zero"} <= set(result.branch_flags)


def test_half_integer_charge_flags_large_residual(
    default_config: ExperimentConfig, default_params: DerivedParams
) -> None:
    """Verify a secular frequency between charge states is flagged."""
    one = forward_frequencies(N_40KHZ, 1, default_params, default_config.paul)
    two = forward_frequencies(N_40KHZ, 2, default_params, default_config.paul)
    between = one.model_copy(update={"omega_s": math.sqrt(0.5 * (one.omega_s**2 + two.omega_s**2))})
    result = infer_charge(between, default_params, default_config.paul)
    assert "large-residual" in result.branch_flags


def test_intervals_cover_the_truth(default_config: ExperimentConfig, default_params: DerivedParams) -> None:
    """Verify the 95% intervals contain the true n and Q in at least 90% of noisy observations."""
    truth = forward_frequencies(N_40KHZ, 2, default_params, default_config.paul)
    sigma_m, sigma_s = 1e-3 * truth.omega_M, 1e-3 * truth.omega_s
    rng = np.random.default_rng(17)
    hits_n = hits_q = 0
    trials = 1000
    for _ in range(trials):
        obs = FrequencyObservation(
            omega_M=truth.omega_M + sigma_m * rng.standard_normal(),
            omega_s=truth.omega_s + sigma_s * rng.standard_normal(),
            omega_M_uncertainty=sigma_m,
            omega_s_uncertainty=sigma_s,
        )
        result = infer_charge(obs, default_params, default_config.paul)
        hits_n += result.photon_n_interval[0] <= N_40KHZ <= result.photon_n_interval[1]
        hits_q += result.charge_interval[0] <= 2.0 <= result.charge_interval[1]
    assert hits_n / trials >= 0.9
    assert hits_q / trials >= 0.9


def _spectrum_with_lines(lines_hz: list[float]) -> PowerSpectrum:
    freqs = np.arange(0.0, 50e3, 10.0)
    psd = np.full(freqs.size, 1e-6)
    for line in lines_hz:
        psd[int(round(line / 10.0))] = 1.0
    return PowerSpectrum(freqs, psd, 10.0, "hann", 1)


def test_extract_observation_reads_both_lines() -> None:
    """Verify ω_M and ω_s are picked within ±30% of rough predictions with one-bin uncertainty."""
    spec = _spectrum_with_lines([10e3, 160.0])
    obs = extract_observation(spec, TWO_PI * 11e3, TWO_PI * 150.0)
    assert obs.omega_M == pytest.approx(TWO_PI * 10e3)
    assert obs.omega_s == pytest.approx(TWO_PI * 160.0)
    assert obs.omega_M_uncertainty == pytest.approx(TWO_PI * 10.0)


def test_extract_observation_falls_back_to_second_harmonic() -> None:  # noqa: D103
    spec = _spectrum_with_lines([10e3, 320.0])
    obs = extract_observation(spec, TWO_PI * 10e3, TWO_PI * 160.0)
    assert obs.omega_s == pytest.approx(TWO_PI * 160.0)


def test_extract_observation_missing_line() -> None:  # noqa: D103
    with pytest.raises(InsufficientDataError, match="mechanical"):
        extract_observation(_spectrum_with_lines([160.0]), TWO_PI * 10e3, TWO_PI * 160.0)
    with pytest.raises(InsufficientDataError, match="secular"):
        extract_observation(_spectrum_with_lines([10e3]), TWO_PI * 10e3, TWO_PI * 160.0)


def _cooling_series(energy_rate: float) -> TimeSeries:
    """Heterodyne-like record whose linear lines carry energy decaying at ``energy_rate``."""
    t = np.arange(12_000) / RATE
    linear = np.exp(-0.5 * energy_rate * t)
    quadratic = np.exp(-energy_rate * t)
    rng = np.random.default_rng(8)
    samples = (
        np.sin(TWO_PI * 100e3 * t)
        + linear * (np.sin(TWO_PI * 90e3 * t) + np.sin(TWO_PI * 110e3 * t) + np.sin(TWO_PI * 10e3 * t))
        + quadratic * np.sin(TWO_PI * 20e3 * t)
        + 1e-3 * rng.standard_normal(t.size)
    )
    return TimeSeries(samples, RATE)


def test_fit_cooling_rate_from_linear_features() -> None:
    """Verify Γ_opt is recovered from the sideband decay and the 2ω_M line decays twice as fast."""
    lines = ExpectedLines(TWO_PI * 100e3, TWO_PI * 10e3, TWO_PI * 1.5e3)
    fit = fit_cooling_rate(spectrogram(_cooling_series(400.0)), lines)
    assert fit.gamma_opt == pytest.approx(400.0, rel=0.1)
    assert {f.kind for f in fit.features} == {"linear_sideband", "direct_1f"}
    assert fit.quadratic_ratio == pytest.approx(2.0, rel=0.1)
    assert fit.gamma_opt_stderr >= 0


def test_fit_cooling_rate_without_features() -> None:  # noqa: D103
    rng = np.random.default_rng(9)
    gram = spectrogram(TimeSeries(rng.standard_normal(12_000), RATE))
    with pytest.raises(InsufficientDataError):
        fit_cooling_rate(gram, ExpectedLines(TWO_PI * 100e3, TWO_PI * 10e3, TWO_PI * 1.5e3), snr=1e6)
