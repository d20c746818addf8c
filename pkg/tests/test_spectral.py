"""Tests for heterodyne synthesis, PSD estimation, peak classification and decay fits."""

import math
from dataclasses import replace

import numpy as np
import pytest

from src.models import ExperimentConfig
from src.services.config_loader import load_config
from src.services.constants import BOLTZMANN, TWO_PI
from src.services.dynamics import TRAJECTORY_COLUMNS, Trajectory, simulate
from src.services.ensemble import simulate_ensemble
from src.services.errors import AliasingError, InsufficientDataError, InvalidInputError, InvalidSegmentationError
from src.services.inference import fit_cooling_rate
from src.services.params import derive_from_config
from src.services.spectral import (
    ExpectedLines,
    PeakRecord,
    PeakSet,
    TimeSeries,
    add_detector_noise,
    default_segment_length,
    detector_series,
    detector_stream,
    expected_lines,
    find_sidebands,
    fit_exponential_decay,
    lines_for_config,
    sideband_decay_rate,
    spectrogram,
    synth_heterodyne,
    temperature_from_trajectory,
    welch_psd,
)
from src.services.sweep import predict_point

from .conftest import sine_series

RATE = 1e6
OMEGA_HET = TWO_PI * 100e3
OMEGA_M = TWO_PI * 10e3
OMEGA_D = TWO_PI * 1.5e3
LINES = ExpectedLines(OMEGA_HET, OMEGA_M, OMEGA_D)
MASS = 8.412986e-17
STRONG_BEAT = 1e4
RETUNED_SWING = 0.20459
WEAK_SIDEBAND = 0.1
TRANSIENT_MEMBERS = 8


def _field_trajectory(field: np.ndarray, x: np.ndarray | None = None, rate: float = RATE) -> Trajectory:
    """Build a trajectory carrying only a field record (and optionally an axial position)."""
    data = np.zeros((field.size, len(TRAJECTORY_COLUMNS)))
    data[:, 0] = np.arange(field.size) / rate
    if x is not None:
        data[:, 1] = x
    data[:, 7] = field.real
    data[:, 8] = field.imag
    return Trajectory(data, 1.0 / rate, "synthetic", 0, omega_M=OMEGA_M, omega_d=OMEGA_D)


def _modulated_field(n_samples: int, mean: float, depth: float) -> np.ndarray:
    t = np.arange(n_samples) / RATE
    return (mean + depth * np.cos(OMEGA_M * t)).astype(complex)


def test_timeseries_validation() -> None:  # noqa: D103
    with pytest.raises(InvalidInputError):
        TimeSeries(np.zeros(10), 0.0)
    with pytest.raises(InvalidInputError):
        TimeSeries(np.zeros(1), 1.0)
    assert TimeSeries(np.zeros(100), 50.0).duration == pytest.approx(2.0)


def test_default_segment_length_targets_resolution() -> None:
    """Verify the default segment is the next power of two giving ≤ 100 Hz bins, capped by the series."""
    assert default_segment_length(1e6, 1 << 20) == 16384
    assert default_segment_length(1e5, 1 << 20) == 1024
    assert default_segment_length(1e6, 5000) == 5000


def test_welch_on_bin_sine_power_and_peak() -> None:
    """Verify a unit on-bin sine integrates to 1/2 and peaks in its own bin."""
    fs = 1e5
    series = sine_series(100 * fs / 1024, fs, 1 << 16)
    spec = welch_psd(series)
    assert spec.resolution == pytest.approx(fs / 1024)
    assert spec.integrated_power() == pytest.approx(0.5, rel=0.01)
    assert int(np.argmax(spec.psd)) == 100
    assert spec.segment_count == 127


def test_welch_white_noise_level() -> None:
    """Verify white noise of variance σ² gives the flat level 2σ²/f_s and Parseval holds."""
    fs, sigma = 1e4, 2.0
    rng = np.random.default_rng(1)
    samples = sigma * rng.standard_normal(1 << 18)
    spec = welch_psd(TimeSeries(samples, fs), segment_length=128)
    assert np.mean(spec.psd[1:-1]) == pytest.approx(2 * sigma**2 / fs, rel=0.05)
    assert spec.integrated_power() == pytest.approx(np.var(samples), rel=0.02)


def test_welch_constant_signal_keeps_dc_without_detrend() -> None:
    """Verify a constant lands entirely in the DC bin when no detrend is applied."""
    series = TimeSeries(np.full(4096, 3.0), 1e3)
    spec = welch_psd(series, segment_length=512, window="boxcar", detrend="none")
    assert spec.psd[0] * spec.resolution == pytest.approx(9.0)
    assert np.allclose(spec.psd[1:], 0.0, atol=1e-20)
    detrended = welch_psd(series, segment_length=512)
    assert detrended.integrated_power() == pytest.approx(0.0, abs=1e-20)


def test_welch_rejects_bad_segmentation() -> None:  # noqa: D103
    series = TimeSeries(np.zeros(100), 1e3)
    with pytest.raises(InvalidSegmentationError):
        welch_psd(series, segment_length=200)
    with pytest.raises(InvalidSegmentationError):
        welch_psd(series, segment_length=1)
    with pytest.raises(InvalidSegmentationError):
        welch_psd(series, segment_length=50, overlap_fraction=1.0)


def test_spectrogram_window_count_and_grid() -> None:
    """Verify 12 ms at 1 MHz with 2.4 ms windows every 0.2 ms gives 49 windows."""
    gram = spectrogram(TimeSeries(np.zeros(12_000), RATE))
    assert len(gram) == 49
    assert gram.window_duration == pytest.approx(2.4e-3)
    assert gram.start_times[1] == pytest.approx(2e-4)
    assert gram.resolution == pytest.approx(RATE / 2400)
    assert gram.power.shape == (49, 1201)
    starts = [start for start, _ in gram]
    assert starts == pytest.approx(list(gram.start_times))


def test_spectrogram_rejects_short_series() -> None:  # noqa: D103
    with pytest.raises(InvalidSegmentationError, match="shorter"):
        spectrogram(TimeSeries(np.zeros(1000), RATE))


def test_spectrogram_of_stationary_sine_is_flat() -> None:
    """Verify the band power of a steady on-bin line varies by less than 1% across windows."""
    frequency = 50 * RATE / 2400
    gram = spectrogram(sine_series(frequency, RATE, 12_000))
    powers = np.array([spec.band_power(frequency, 2 * gram.resolution) for _, spec in gram])
    assert np.ptp(powers) / np.mean(powers) < 0.01


def test_sideband_decay_rate_recovers_power_decay() -> None:
    """Verify an envelope exp(-200 t) on the amplitude is fitted as a power decay of 400 s⁻¹."""
    frequency = 50 * RATE / 2400
    gram = spectrogram(sine_series(frequency, RATE, 12_000, decay_rate=200.0))
    fit = sideband_decay_rate(gram, "direct_1f", frequency)
    assert fit.rate == pytest.approx(400.0, rel=0.05)
    assert fit.detections == len(gram)
    assert fit.kind == "direct_1f"


def test_sideband_decay_rate_of_steady_line_is_zero() -> None:  # noqa: D103
    frequency = 50 * RATE / 2400
    gram = spectrogram(sine_series(frequency, RATE, 12_000))
    assert abs(sideband_decay_rate(gram, "direct_1f", frequency).rate) < 1.0


def test_sideband_decay_rate_needs_detections() -> None:
    """Verify a line absent from every window raises InsufficientDataError."""
    rng = np.random.default_rng(2)
    gram = spectrogram(TimeSeries(rng.standard_normal(12_000), RATE))
    with pytest.raises(InsufficientDataError):
        sideband_decay_rate(gram, "linear_sideband", 90e3, snr=1e6)


def test_fit_exponential_decay_exact() -> None:  # noqa: D103
    t = np.linspace(0.0, 1e-2, 40)
    rate, stderr, residual = fit_exponential_decay(t, 3.0 * np.exp(-250.0 * t))
    assert rate == pytest.approx(250.0, rel=1e-6)
    assert stderr < 1e-3
    assert residual < 1e-9


def test_fit_exponential_decay_rejects_bad_input() -> None:  # noqa: D103
    with pytest.raises(InsufficientDataError):
        fit_exponential_decay([0.0, 1.0], [1.0, 0.5])
    with pytest.raises(InsufficientDataError):
        fit_exponential_decay([0.0, 1.0, 2.0], [1.0, 0.0, 0.5])


def test_heterodyne_line_ratios() -> None:
    """Verify the beat, linear sidebands and direct line follow |L e^{iΩt} + ᾱ + δcos ω_M t|²."""
    mean, depth, lock = 10.0, 0.1, 1.0
    traj = _field_trajectory(_modulated_field(1 << 17, mean, depth))
    spec = welch_psd(synth_heterodyne(traj, OMEGA_HET, lock))
    peaks = find_sidebands(spec, LINES)
    sidebands = peaks.of_kind("linear_sideband")
    beat = peaks.of_kind("beat")

    assert len(sidebands) == 2
    assert len(beat) == 1
    assert sidebands[0].amplitude == pytest.approx(sidebands[1].amplitude, rel=0.01)
    assert sidebands[0].amplitude / beat[0].amplitude == pytest.approx((depth / (2 * mean)) ** 2, rel=0.01)
    assert {round(r.center_hz / 1e3) for r in sidebands} == {90, 110}
    assert peaks.of_kind("direct_1f")
    assert not peaks.of_kind("drive_split")


def test_linear_sideband_power_scales_with_modulation_squared() -> None:  # noqa: D103
    small = _field_trajectory(_modulated_field(1 << 17, 10.0, 0.05))
    large = _field_trajectory(_modulated_field(1 << 17, 10.0, 0.10))
    power = [
        find_sidebands(welch_psd(synth_heterodyne(traj, OMEGA_HET, 1.0)), LINES).total_amplitude("linear_sideband")
        for traj in (small, large)
    ]
    assert power[1] / power[0] == pytest.approx(4.0, rel=0.02)


def test_without_local_beam_only_direct_lines_remain() -> None:
    """Verify a zero lock amplitude removes the Ω family."""
    traj = _field_trajectory(_modulated_field(1 << 17, 10.0, 0.1))
    peaks = find_sidebands(welch_psd(synth_heterodyne(traj, OMEGA_HET, 0.0)), LINES)
    assert not peaks.of_kind("beat")
    assert not peaks.of_kind("linear_sideband")
    assert peaks.of_kind("direct_1f")


def test_find_sidebands_on_clean_pair() -> None:
    """Verify two lines at Ω ± ω_M over a weak floor are reported as linear sidebands only."""
    n = 1 << 17
    t = np.arange(n) / RATE
    rng = np.random.default_rng(4)
    samples = np.sin(TWO_PI * 90e3 * t) + np.sin(TWO_PI * 110e3 * t) + 1e-3 * rng.standard_normal(n)
    spec = welch_psd(TimeSeries(samples, RATE))
    peaks = find_sidebands(spec, LINES)
    assert sorted(r.kind for r in peaks.records) == ["linear_sideband", "linear_sideband"]
    for record in peaks.records:
        assert min(abs(record.center_hz - 90e3), abs(record.center_hz - 110e3)) <= spec.resolution
        assert record.width_hz > 0


def test_weak_sidebands_under_a_strong_beat_are_found() -> None:
    """Verify Ω ± ω_M lines 100 dB under the beat are still detected against their own neighbourhood."""
    n = 1 << 17
    t = np.arange(n) / RATE
    rng = np.random.default_rng(8)
    sidebands = WEAK_SIDEBAND * (np.sin(TWO_PI * 90e3 * t) + np.sin(TWO_PI * 110e3 * t))
    samples = STRONG_BEAT * np.sin(TWO_PI * 100e3 * t) + sidebands + 1e-4 * rng.standard_normal(n)
    peaks = find_sidebands(welch_psd(TimeSeries(samples, RATE)), LINES)
    found = peaks.of_kind("linear_sideband")
    assert len(found) == 2
    assert peaks.of_kind("beat")
    for record in found:
        assert record.amplitude == pytest.approx(WEAK_SIDEBAND**2 / 2, rel=0.05)


def test_synth_heterodyne_rejects_aliasing() -> None:
    """Verify a detector rate at or below 2(Ω + 2ω_M)/2π raises AliasingError."""
    traj = _field_trajectory(_modulated_field(4096, 1.0, 0.1))
    with pytest.raises(AliasingError):
        synth_heterodyne(traj, OMEGA_HET, 1.0, sample_rate=2e5)


def test_synth_heterodyne_resamples() -> None:  # noqa: D103
    traj = _field_trajectory(_modulated_field(4000, 1.0, 0.1))
    series = synth_heterodyne(traj, OMEGA_HET, 1.0, sample_rate=5e5)
    assert series.sample_rate == pytest.approx(5e5)
    assert len(series.samples) == 2000


def test_detector_noise_level_and_stream() -> None:
    """Verify added white noise has variance psd·f_s/2 and the detector stream is reproducible."""
    series = TimeSeries(np.zeros(1 << 16), 1e4)
    noisy = add_detector_noise(series, 1e-3, detector_stream(3, 0))
    assert np.var(noisy.samples) == pytest.approx(1e-3 * 1e4 / 2, rel=0.03)
    again = add_detector_noise(series, 1e-3, detector_stream(3, 0))
    assert np.array_equal(noisy.samples, again.samples)
    other = add_detector_noise(series, 1e-3, detector_stream(3, 1))
    assert not np.array_equal(noisy.samples, other.samples)


def test_temperature_from_deterministic_oscillation() -> None:
    """Verify x = X cos ω_M t reads back T = mω_M²X²/(2k_B)."""
    amplitude = 1e-9
    n = 5000
    t = np.arange(n) / RATE
    traj = _field_trajectory(np.zeros(n, dtype=complex), x=1e-6 + amplitude * np.cos(OMEGA_M * t))
    t_eff, n_p = temperature_from_trajectory(traj, OMEGA_M, MASS, 4e-3)
    expected = MASS * OMEGA_M**2 * amplitude**2 / (2 * BOLTZMANN)
    assert t_eff == pytest.approx(expected, rel=0.01)
    assert n_p > 0


def test_temperature_window_checks() -> None:  # noqa: D103
    traj = _field_trajectory(np.zeros(5000, dtype=complex))
    with pytest.raises(InvalidSegmentationError, match="periods"):
        temperature_from_trajectory(traj, OMEGA_M, MASS, 1e-3)
    with pytest.raises(InvalidSegmentationError, match="longer"):
        temperature_from_trajectory(traj, OMEGA_M, MASS, 1e-2)


def test_peak_set_helpers() -> None:  # noqa: D103
    records = (
        PeakRecord("linear_sideband", "Omega-omega_M", 90e3, 2.0, 10.0),
        PeakRecord("linear_sideband", "Omega+omega_M", 110e3, 3.0, 10.0),
        PeakRecord("beat", "Omega", 100e3, 7.0, 10.0),
    )
    peaks = PeakSet(records)
    assert peaks.total_amplitude("linear_sideband") == pytest.approx(5.0)
    assert peaks.total_amplitude("quadratic_sideband") == 0.0
    listed = peaks.to_list()
    assert listed[2]["kind"] == "beat"
    assert math.isclose(float(listed[0]["center_hz"]), 90e3)


def test_linear_family_counts_each_peak_once() -> None:
    """Verify Ω ± ω_M satellites add to the linear power and a shared peak is not counted twice."""
    peaks = PeakSet(
        (
            PeakRecord("linear_sideband", "Omega-omega_M", 88.5e3, 2.0, 10.0),
            PeakRecord("drive_split", "Omega-omega_M-omega_d", 88.5e3, 2.0, 10.0),
            PeakRecord("drive_split", "Omega-omega_M+omega_d", 91.5e3, 3.0, 10.0),
            PeakRecord("drive_split", "omega_M+omega_d", 11.5e3, 5.0, 10.0),
        )
    )
    assert peaks.linear_family_amplitude() == pytest.approx(5.0)


def test_expected_lines_in_hertz() -> None:  # noqa: D103
    assert LINES.het_hz == pytest.approx(100e3)
    assert LINES.mech_hz == pytest.approx(10e3)
    assert LINES.drive_hz == pytest.approx(1.5e3)


def test_expected_lines_track_the_softened_well(fig3_config: ExperimentConfig) -> None:
    """Verify off-center wells expect the mechanical line at the drive-averaged frequency."""
    params = derive_from_config(fig3_config)
    frozen_config = load_config("fig3", ["integrator.cavity_mode=frozen"])
    assert expected_lines(fig3_config.detection, params).omega_M == params.omega_M
    frozen = lines_for_config(frozen_config, params).omega_M
    assert frozen == pytest.approx(params.omega_M * (1 - RETUNED_SWING**2 / 8), rel=2e-4)
    assert lines_for_config(fig3_config, params).omega_M < frozen


def _detector_peaks(config: ExperimentConfig) -> PeakSet:
    params = derive_from_config(config)
    det = config.detection
    series = detector_series(simulate(config), det, params)
    return find_sidebands(welch_psd(series), lines_for_config(config, params), snr=det.peak_snr)


@pytest.mark.slow
def test_cooling_transient_spectra(fig3_config: ExperimentConfig) -> None:
    """Verify the N = 450 transient decays at γ_M + Γ_cycle within 30% and quadratic features twice as fast."""
    params = derive_from_config(fig3_config)
    det = fig3_config.detection
    lines = lines_for_config(fig3_config, params)
    members = simulate_ensemble(fig3_config, TRANSIENT_MEMBERS, workers=4)
    grams = [
        spectrogram(detector_series(traj, det, params), det.spectrogram_window_s, det.spectrogram_spacing_s)
        for traj in members
    ]
    averaged = replace(grams[0], power=np.mean([g.power for g in grams], axis=0))

    kinds = {r.kind for r in find_sidebands(welch_psd(detector_series(members[0], det, params)), lines).records}
    assert {"beat", "drive_split"} <= kinds

    fit = fit_cooling_rate(averaged, lines)
    prediction = predict_point(fig3_config)
    assert fit.gamma_opt - params.gamma_M == pytest.approx(prediction.gamma_opt_cycle, rel=0.3)
    assert fit.quadratic_ratio is not None
    assert fit.quadratic_ratio == pytest.approx(2.0, abs=0.6)


@pytest.mark.slow
def test_quadratic_lines_dominate_near_the_trap_center() -> None:
    """Verify wells N < 10 of the low-well preset show more Ω ± 2ω_M power than linear-sideband power."""
    for well in (0, 5):
        peaks = _detector_peaks(load_config("fig2", [f"well_index={well}"]))
        assert peaks.total_amplitude("quadratic_sideband") > peaks.linear_family_amplitude()


@pytest.mark.slow
def test_drive_splits_the_linear_sidebands_of_a_high_well() -> None:
    """Verify N = 350 shows the Ω - ω_M line split by ±ω_d and linear power above quadratic."""
    config = load_config("fig4a")
    params = derive_from_config(config)
    peaks = _detector_peaks(config)
    split = {r.label: r.center_hz for r in peaks.of_kind("drive_split")}
    lower, upper = split["Omega-omega_M-omega_d"], split["Omega-omega_M+omega_d"]
    resolution = RATE / default_segment_length(RATE, round(config.integrator.duration_s * RATE))
    assert upper - lower == pytest.approx(2 * params.omega_d / TWO_PI, abs=4 * resolution)
    assert peaks.linear_family_amplitude() > peaks.total_amplitude("quadratic_sideband")
