"""Heterodyne detection synthesis and spectral analysis of trajectories.

Provides the detector signal |a_lock e^{iΩt} + a(t)|², one-sided Welch PSDs
normalized so that ∫psd df equals the variance, time-resolved spectrograms,
classification of beat/sideband/direct/drive-split peaks, exponential decay
fits of spectral features, and temperature estimates from position records.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Literal

import numpy as np
from loguru import logger
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.signal import filtfilt, find_peaks, iirnotch, peak_widths, periodogram, resample_poly, welch

from src.services.constants import BOLTZMANN, TWO_PI
from src.services.errors import (
    AliasingError,
    InsufficientDataError,
    InvalidInputError,
    InvalidSegmentationError,
    NotAWellError,
)
from src.services.linear_model import (
    drive_averaged_well_frequency,
    excursion_amplitude,
    phase_excursion,
    phonon_occupancy,
    well_site,
)

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from src.models import DetectionSpec, ExperimentConfig
    from src.services.dynamics import Trajectory
    from src.services.params import DerivedParams

Origin = Literal["detector", "position-x", "position-y", "position-z"]
Detrend = Literal["constant", "linear", "none"]

MAX_RESOLUTION_HZ = 100.0
DEFAULT_WINDOW_DURATION_S = 2.4e-3
DEFAULT_WINDOW_SPACING_S = 0.2e-3
DEFAULT_PEAK_SNR = 10.0
MAIN_SEARCH_DRIVE_MULTIPLE = 3.0
SPLIT_SEARCH_DRIVE_FRACTION = 1.0 / 3.0
DECAY_BAND_BINS = 2
MIN_DECAY_DETECTIONS = 5
MIN_TEMPERATURE_PERIODS = 20
NOTCH_QUALITY = 30.0
MAX_RESAMPLE_DENOMINATOR = 1000
DETECTOR_STREAM_KEY = 1

PEAK_KINDS = ("beat", "linear_sideband", "quadratic_sideband", "direct_1f", "direct_2f", "drive_split")


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled real signal."""

    samples: np.ndarray
    sample_rate: float
    origin: Origin = "detector"

    def __post_init__(self) -> None:
        """Validate rate and length."""
        if not self.sample_rate > 0:
            msg = f"sample_rate must be positive, got {self.sample_rate}"
            raise InvalidInputError(msg)
        if np.asarray(self.samples).ndim != 1 or len(self.samples) < 2:  # noqa: PLR2004
            msg = "a time series needs at least two samples"
            raise InvalidInputError(msg)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    """One-sided power spectral density on a uniform frequency grid."""

    frequencies: np.ndarray
    psd: np.ndarray
    resolution: float
    window: str
    segment_count: int

    def integrated_power(self) -> float:
        """Return ∫psd df."""
        return float(np.sum(self.psd) * self.resolution)

    def nearest_bin(self, frequency_hz: float) -> int:
        """Return the index of the bin closest to ``frequency_hz``."""
        return int(np.argmin(np.abs(self.frequencies - frequency_hz)))

    def band_power(self, center_hz: float, half_width_hz: float, floor: float = 0.0) -> float:
        """Return the floor-subtracted power integrated over center ± half_width."""
        band = np.abs(self.frequencies - center_hz) <= half_width_hz
        return float(np.sum(np.clip(self.psd[band] - floor, 0.0, None)) * self.resolution)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Windowed PSDs: row i of ``power`` is the spectrum of the window starting at ``start_times[i]``."""

    window_duration: float
    window_spacing: float
    start_times: np.ndarray
    frequencies: np.ndarray
    power: np.ndarray
    window: str = "hann"

    def __len__(self) -> int:
        """Number of windows."""
        return int(self.start_times.size)

    @property
    def resolution(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def spectrum(self, index: int) -> PowerSpectrum:
        """Return window ``index`` as a PowerSpectrum."""
        return PowerSpectrum(self.frequencies, self.power[index], self.resolution, self.window, 1)

    def __iter__(self) -> Iterator[tuple[float, PowerSpectrum]]:
        """Yield (start_time, PowerSpectrum) pairs in time order."""
        for i, start in enumerate(self.start_times):
            yield float(start), self.spectrum(i)


@dataclass(frozen=True, slots=True)
class ExpectedLines:
    """Heterodyne, mechanical and drive angular frequencies (rad/s) used to locate peaks."""

    omega_het: float
    omega_M: float
    omega_d: float

    @property
    def het_hz(self) -> float:
        return self.omega_het / TWO_PI

    @property
    def mech_hz(self) -> float:
        return self.omega_M / TWO_PI

    @property
    def drive_hz(self) -> float:
        return self.omega_d / TWO_PI


@dataclass(frozen=True, slots=True)
class PeakRecord:
    """A classified spectral peak. ``amplitude`` is the floor-subtracted integrated power."""

    kind: str
    label: str
    center_hz: float
    amplitude: float
    width_hz: float


@dataclass(frozen=True)
class PeakSet:
    """Peaks found in one spectrum."""

    records: tuple[PeakRecord, ...] = ()

    def of_kind(self, kind: str) -> tuple[PeakRecord, ...]:
        """Return the records of one kind."""
        return tuple(r for r in self.records if r.kind == kind)

    def total_amplitude(self, kind: str) -> float:
        """Return the summed amplitude of one kind (0 when absent)."""
        return float(sum(r.amplitude for r in self.of_kind(kind)))

    def linear_family_amplitude(self) -> float:
        """Return the power in Ω ± ω_M and its ±ω_d satellites, counting each detected peak once."""
        family = list(self.of_kind("linear_sideband"))
        family += [r for r in self.of_kind("drive_split") if r.label.startswith("Omega")]
        return float(sum({r.center_hz: r.amplitude for r in family}.values()))

    def to_list(self) -> list[dict[str, float | str]]:
        """Return JSON-ready records."""
        return [asdict(r) for r in self.records]


@dataclass(frozen=True, slots=True)
class DecayFit:
    """Exponential fit P(t) = P0·exp(-rate·t) of a feature's windowed power."""

    kind: str
    center_hz: float
    rate: float
    rate_stderr: float
    residual: float
    detections: int


def position_series(traj: Trajectory, axis: Literal["x", "y", "z"] = "x") -> TimeSeries:
    """Return one position coordinate of a trajectory as a TimeSeries."""
    return TimeSeries(np.array(traj.column(axis)), traj.sample_rate, f"position-{axis}")  # type: ignore[arg-type]


def add_detector_noise(series: TimeSeries, psd_level: float, rng: np.random.Generator) -> TimeSeries:
    """Add white noise of one-sided PSD ``psd_level`` (variance psd·f_s/2)."""
    sigma = math.sqrt(psd_level * series.sample_rate / 2.0)
    noisy = series.samples + sigma * rng.standard_normal(len(series.samples))
    return TimeSeries(noisy, series.sample_rate, series.origin)


def synth_heterodyne(
    traj: Trajectory,
    omega_het: float,
    lock_amplitude: float,
    sample_rate: float | None = None,
    *,
    noise_psd: float = 0.0,
    rng: np.random.Generator | None = None,
) -> TimeSeries:
    """Return the detector signal |a_lock·e^{iΩt} + a(t)|².

    Parameters:
    - traj: Trajectory whose field samples are detected.
    - omega_het: Heterodyne offset Ω (rad/s).
    - lock_amplitude: Real amplitude of the local beam in field units.
    - sample_rate: Detector rate in Hz (defaults to the trajectory record rate).
    - noise_psd: Optional additive white noise level.

    Raises:
    - AliasingError: either rate is at or below 2(Ω + 2ω_M)/2π.
    """
    record_rate = traj.sample_rate
    rate = sample_rate or record_rate
    nyquist_need = 2.0 * (omega_het + 2.0 * traj.omega_M) / TWO_PI
    if min(rate, record_rate) <= nyquist_need:
        msg = f"sample rate {min(rate, record_rate):.6g} Hz cannot represent lines up to {nyquist_need / 2:.6g} Hz"
        raise AliasingError(msg)

    signal = np.abs(lock_amplitude * np.exp(1j * omega_het * traj.t) + traj.field) ** 2
    actual_rate = record_rate
    if not math.isclose(rate, record_rate, rel_tol=1e-12):
        ratio = Fraction(rate / record_rate).limit_denominator(MAX_RESAMPLE_DENOMINATOR)
        offset = float(np.mean(signal))
        signal = resample_poly(signal - offset, ratio.numerator, ratio.denominator) + offset
        actual_rate = record_rate * ratio.numerator / ratio.denominator
        logger.debug("Resampled detector signal {} -> {:.6g} Hz", ratio, actual_rate)

    series = TimeSeries(signal, actual_rate, "detector")
    if noise_psd > 0:
        series = add_detector_noise(series, noise_psd, rng or np.random.default_rng())
    return series


def default_segment_length(sample_rate: float, n_samples: int) -> int:
    """Return the smallest power of two giving at most MAX_RESOLUTION_HZ, capped at the series length."""
    target = max(2, math.ceil(sample_rate / MAX_RESOLUTION_HZ))
    length = 1 << (target - 1).bit_length()
    if length > n_samples:
        logger.debug("Series of {} samples is shorter than the {}-sample default segment", n_samples, length)
        length = n_samples
    return length


def welch_psd(
    series: TimeSeries,
    segment_length: int | None = None,
    overlap_fraction: float = 0.5,
    window: str = "hann",
    detrend: Detrend = "constant",
) -> PowerSpectrum:
    """Return the averaged modified periodogram (one-sided, density scaling).

    ``detrend="constant"`` removes each segment's mean so ∫psd df equals the variance;
    ``detrend="none"`` keeps the DC bin.

    Raises:
    - InvalidSegmentationError: segment longer than the series, shorter than two
      samples, or overlap outside [0, 1).
    """
    n = len(series.samples)
    nperseg = segment_length if segment_length is not None else default_segment_length(series.sample_rate, n)
    if nperseg < 2 or nperseg > n:  # noqa: PLR2004
        msg = f"segment length {nperseg} must lie in [2, {n}]"
        raise InvalidSegmentationError(msg)
    if not 0.0 <= overlap_fraction < 1.0:
        msg = f"overlap fraction must lie in [0, 1), got {overlap_fraction}"
        raise InvalidSegmentationError(msg)
    noverlap = min(int(overlap_fraction * nperseg), nperseg - 1)
    freqs, psd = welch(
        series.samples,
        fs=series.sample_rate,
        window=window,
        nperseg=nperseg,
        noverlap=noverlap,
        detrend=False if detrend == "none" else detrend,
        scaling="density",
        return_onesided=True,
    )
    segments = (n - noverlap) // (nperseg - noverlap)
    return PowerSpectrum(freqs, np.clip(psd, 0.0, None), series.sample_rate / nperseg, window, segments)


def spectrogram(
    series: TimeSeries,
    window_duration: float = DEFAULT_WINDOW_DURATION_S,
    window_spacing: float = DEFAULT_WINDOW_SPACING_S,
    *,
    window: str = "hann",
    detrend: Detrend = "constant",
) -> Spectrogram:
    """Return PSDs of windows of ``window_duration`` started every ``window_spacing``.

    Raises:
    - InvalidSegmentationError: the series is shorter than one window or the spacing
      is below one sample.
    """
    fs = series.sample_rate
    nperseg = round(window_duration * fs)
    hop = round(window_spacing * fs)
    n = len(series.samples)
    if hop < 1 or nperseg < 2:  # noqa: PLR2004
        msg = f"window ({nperseg} samples) and spacing ({hop} samples) are too short"
        raise InvalidSegmentationError(msg)
    if nperseg > n:
        msg = f"series of {series.duration:.6g} s is shorter than one {window_duration:.6g} s window"
        raise InvalidSegmentationError(msg)
    frames = np.lib.stride_tricks.sliding_window_view(series.samples, nperseg)[::hop]
    freqs, power = periodogram(
        frames,
        fs=fs,
        window=window,
        detrend=False if detrend == "none" else detrend,
        scaling="density",
        axis=-1,
    )
    starts = np.arange(frames.shape[0]) * hop / fs
    return Spectrogram(nperseg / fs, hop / fs, starts, freqs, np.clip(power, 0.0, None), window)


def noise_floor(spec: PowerSpectrum) -> float:
    """Return the median PSD, used as the noise floor estimate."""
    return float(np.median(spec.psd))


def expected_centers(expected: ExpectedLines) -> list[tuple[str, str, float]]:
    """Return (kind, label, center_hz) for the beat, sideband and direct-modulation lines."""
    het, mech = expected.het_hz, expected.mech_hz
    return [
        ("beat", "Omega", het),
        ("linear_sideband", "Omega-omega_M", het - mech),
        ("linear_sideband", "Omega+omega_M", het + mech),
        ("quadratic_sideband", "Omega-2omega_M", het - 2 * mech),
        ("quadratic_sideband", "Omega+2omega_M", het + 2 * mech),
        ("direct_1f", "omega_M", mech),
        ("direct_2f", "2omega_M", 2 * mech),
    ]


def drive_split_centers(expected: ExpectedLines) -> list[tuple[str, str, float]]:
    """Return the ±ω_d satellites of the mechanical line and of both linear sidebands."""
    het, mech, drive = expected.het_hz, expected.mech_hz, expected.drive_hz
    centers = []
    for label, base in (("omega_M", mech), ("Omega-omega_M", het - mech), ("Omega+omega_M", het + mech)):
        centers.append(("drive_split", f"{label}-omega_d", base - drive))
        centers.append(("drive_split", f"{label}+omega_d", base + drive))
    return centers


def _locate_peak(
    spec: PowerSpectrum,
    center_hz: float,
    search_half_hz: float,
    threshold: float,
) -> int | None:
    freqs = spec.frequencies
    if center_hz <= 0 or center_hz - search_half_hz > freqs[-1] or center_hz + search_half_hz < freqs[0]:
        return None
    idx = np.flatnonzero(np.abs(freqs - center_hz) <= search_half_hz)
    if idx.size < 3:  # noqa: PLR2004
        return None
    local = spec.psd[idx]
    maxima, _ = find_peaks(local)
    if maxima.size == 0:
        return None
    best = int(idx[maxima[np.argmax(local[maxima])]])
    return best if spec.psd[best] >= threshold else None


def local_floor(spec: PowerSpectrum, center_hz: float, half_width_hz: float) -> float:
    """Return the median PSD within center ± half_width, never below the global median."""
    band = np.abs(spec.frequencies - center_hz) <= half_width_hz
    floor = noise_floor(spec)
    if not np.any(band):
        return floor
    return max(floor, float(np.median(spec.psd[band])))


def find_sidebands(spec: PowerSpectrum, expected: ExpectedLines, *, snr: float = DEFAULT_PEAK_SNR) -> PeakSet:
    """Locate and classify the expected heterodyne features.

    Main lines are searched within ±3ω_d of their expected centers, drive-split
    satellites within ±ω_d/3. A feature is present when its local maximum clears
    ``snr`` times the floor of its own neighbourhood: the median PSD over ±3ω_d
    around the expected center, bounded below by the global median, so lines far
    under the beat are still reported. Amplitudes integrate the PSD above that
    floor over ±ω_d/2 around the peak.
    """
    drive = expected.drive_hz
    neighbourhood = MAIN_SEARCH_DRIVE_MULTIPLE * drive
    searches = [(c, neighbourhood) for c in expected_centers(expected)]
    searches += [(c, SPLIT_SEARCH_DRIVE_FRACTION * drive) for c in drive_split_centers(expected)]

    records: list[PeakRecord] = []
    for (kind, label, center), half in searches:
        floor = local_floor(spec, center, neighbourhood)
        best = _locate_peak(spec, center, half, snr * floor)
        if best is None:
            logger.debug("{} ({:.1f} Hz) not detected", label, center)
            continue
        peak_hz = float(spec.frequencies[best])
        width_bins = peak_widths(spec.psd, [best], rel_height=0.5)[0][0]
        records.append(
            PeakRecord(
                kind=kind,
                label=label,
                center_hz=peak_hz,
                amplitude=spec.band_power(peak_hz, 0.5 * drive, floor),
                width_hz=float(width_bins * spec.resolution),
            )
        )
    return PeakSet(tuple(records))


def fit_exponential_decay(times: Sequence[float], values: Sequence[float]) -> tuple[float, float, float]:
    """Fit values ≈ P0·exp(-rate·t) by weighted least squares.

    The fit is seeded by a log-linear regression and weighted by the seed model so
    all decades count. Returns (rate, rate_stderr, relative RMS residual).
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 3 or np.any(y <= 0):  # noqa: PLR2004
        msg = f"need at least three positive samples to fit a decay, got {t.size}"
        raise InsufficientDataError(msg)
    tau = t - t[0]
    slope, intercept = np.polyfit(tau, np.log(y), 1)
    seed_model = np.exp(intercept + slope * tau)

    def model(tt: np.ndarray, p0: float, rate: float) -> np.ndarray:
        return p0 * np.exp(-rate * tt)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, pcov = curve_fit(model, tau, y, p0=(math.exp(intercept), -slope), sigma=seed_model, maxfev=20_000)
    rate = float(popt[1])
    variance = float(pcov[1, 1])
    stderr = math.sqrt(variance) if math.isfinite(variance) and variance >= 0 else math.inf
    residual = float(np.sqrt(np.mean((y - model(tau, *popt)) ** 2)) / np.mean(y))
    return rate, stderr, residual


def sideband_decay_rate(
    gram: Spectrogram,
    peak_kind: str,
    center_hz: float,
    *,
    half_width_hz: float | None = None,
    snr: float = DEFAULT_PEAK_SNR,
) -> DecayFit:
    """Fit the exponential decay of a feature's band power across spectrogram windows.

    Parameters:
    - gram: Spectrogram to scan.
    - peak_kind: Kind recorded in the result.
    - center_hz: Feature frequency.
    - half_width_hz: Integration half width (default two bins).
    - snr: Detection threshold over the per-window median floor.

    Raises:
    - InsufficientDataError: fewer than five windows show the feature.
    """
    half = half_width_hz if half_width_hz is not None else DECAY_BAND_BINS * gram.resolution
    band = np.abs(gram.frequencies - center_hz) <= half
    if not np.any(band):
        msg = f"no spectrogram bins within {half:.1f} Hz of {center_hz:.1f} Hz"
        raise InsufficientDataError(msg)
    times: list[float] = []
    powers: list[float] = []
    for start, row in zip(gram.start_times, gram.power, strict=True):
        floor = float(np.median(row))
        if row[band].max() < snr * floor:
            continue
        power = float(np.sum(np.clip(row[band] - floor, 0.0, None)) * gram.resolution)
        if power > 0:
            times.append(float(start))
            powers.append(power)
    if len(times) < MIN_DECAY_DETECTIONS:
        msg = f"{peak_kind} at {center_hz:.1f} Hz detected in {len(times)} windows, need {MIN_DECAY_DETECTIONS}"
        raise InsufficientDataError(msg)
    rate, stderr, residual = fit_exponential_decay(times, powers)
    return DecayFit(peak_kind, center_hz, rate, stderr, residual, len(times))


def remove_micromotion(samples: np.ndarray, sample_rate: float, omega_d: float) -> np.ndarray:
    """Notch out the drive frequency and its second harmonic (zero-phase)."""
    filtered = samples - np.mean(samples)
    for harmonic in (1, 2):
        f0 = harmonic * omega_d / TWO_PI
        if 0 < f0 < 0.5 * sample_rate:
            b, a = iirnotch(f0, NOTCH_QUALITY, fs=sample_rate)
            filtered = filtfilt(b, a, filtered)
    return filtered


def temperature_from_trajectory(traj: Trajectory, omega_M: float, mass: float, window: float) -> tuple[float, float]:
    """Estimate (T_eff, n_p) from the axial motion in the final ``window`` seconds.

    T_eff = mω_M²⟨x²⟩/k_B after removing the mean and the micromotion lines.

    Raises:
    - InvalidSegmentationError: window shorter than 20 mechanical periods or longer
      than the trajectory.
    """
    if omega_M <= 0:
        msg = f"omega_M must be positive, got {omega_M}"
        raise InvalidInputError(msg)
    min_window = MIN_TEMPERATURE_PERIODS * TWO_PI / omega_M
    if window < min_window:
        msg = f"window {window:.3e} s is shorter than {MIN_TEMPERATURE_PERIODS} mechanical periods ({min_window:.3e} s)"
        raise InvalidSegmentationError(msg)
    count = round(window * traj.sample_rate)
    if count > len(traj):
        msg = f"window {window:.3e} s is longer than the trajectory"
        raise InvalidSegmentationError(msg)
    x = remove_micromotion(np.array(traj.x[-count:]), traj.sample_rate, traj.omega_d)
    x = x - np.mean(x)
    t_eff = mass * omega_M**2 * float(np.mean(x**2)) / BOLTZMANN
    return t_eff, phonon_occupancy(t_eff, omega_M)


def detector_stream(seed: int, member: int) -> np.random.Generator:
    """Return the detector-noise stream of a member, independent of its dynamics stream."""
    sequence = np.random.SeedSequence(seed, spawn_key=(member, DETECTOR_STREAM_KEY))
    return np.random.Generator(np.random.Philox(sequence))


def expected_lines(
    detection: DetectionSpec,
    params: DerivedParams,
    well_index: int = 0,
    *,
    cavity_feedback: bool = True,
) -> ExpectedLines:
    """Return the line set a detector configured by ``detection`` should see.

    Off the trap center the mechanical line sits at the drive-averaged well
    frequency, below ω_M by roughly φ²/8 of it. When the particle cannot stay in
    well ``well_index`` the bare ω_M is used.
    """
    omega_het = detection.omega_het_rad_s or params.detuning_eff
    omega_M = params.omega_M
    if well_index and omega_M > 0:
        site = well_site(well_index, params)
        swing = phase_excursion(excursion_amplitude(site, params.omega_T_sq, omega_M), params)
        try:
            omega_M = drive_averaged_well_frequency(params, swing, cavity_feedback=cavity_feedback)
        except NotAWellError as exc:
            logger.warning("Well {} has no stable line ({}); expecting the bare omega_M", well_index, exc)
    return ExpectedLines(omega_het, omega_M, params.omega_d)


def detector_series(traj: Trajectory, detection: DetectionSpec, params: DerivedParams) -> TimeSeries:
    """Build the analysed signal: the heterodyne detector or a position coordinate, plus optional white noise."""
    if detection.source == "detector":
        lines = expected_lines(detection, params)
        lock = detection.lock_ratio * abs(params.alpha_bar)
        series = synth_heterodyne(traj, lines.omega_het, lock, detection.sample_rate_hz)
    else:
        series = position_series(traj, detection.source.removeprefix("position-"))  # type: ignore[arg-type]
    if detection.white_noise_psd > 0:
        series = add_detector_noise(series, detection.white_noise_psd, detector_stream(traj.seed, traj.member))
    return series


def lines_for_config(config: ExperimentConfig, params: DerivedParams) -> ExpectedLines:
    """Return the expected lines of a configured run, including its well and cavity mode."""
    return expected_lines(
        config.detection,
        params,
        config.well_index,
        cavity_feedback=config.integrator.cavity_mode != "frozen",
    )
