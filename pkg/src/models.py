"""Pydantic models for the HybridTrap simulator.

This module defines the configuration and record models, including:
- Physical input specs (sphere, cavity, Paul trap, background gas)
- Numerical settings (noise, integrator, detection, outputs, sweeps)
- The complete ExperimentConfig and its fingerprint
- Observation and run-manifest records exchanged as JSON
- Process settings (Settings)

All physical quantities are SI; key names carry their unit as a suffix.
"""

from __future__ import annotations

import hashlib
import math
from datetime import datetime
from typing import Any, Literal

import orjson
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.services.constants import N2_MOLECULE_MASS, TWO_PI

TOOL_VERSION = "1.0.0"

# Silica nanosphere
DEFAULT_RADIUS_M = 209e-9
DEFAULT_DENSITY_KG_M3 = 2200.0
DEFAULT_REL_PERMITTIVITY = 2.1
# Cavity
DEFAULT_WAVELENGTH_M = 1064e-9
DEFAULT_WAIST_M = 60e-6
DEFAULT_LENGTH_M = 13e-3
DEFAULT_FINESSE = 50_000.0
DEFAULT_DETUNING_RAD_S = TWO_PI * 100e3
# Photon number giving a 10 kHz well frequency with the defaults above
DEFAULT_PHOTON_N = 2.436893e8
# Paul trap
DEFAULT_DRIVE_FREQ_RAD_S = TWO_PI * 1500.0
DEFAULT_VOLTAGE_V = 300.0
DEFAULT_SCALE_M = 1e-3
# Gas
DEFAULT_PRESSURE_PA = 3e-2
DEFAULT_TEMPERATURE_K = 300.0
# Integration
DEFAULT_DT_S = 2e-7
DEFAULT_DURATION_S = 1e-3
DEFAULT_RECORD_STRIDE = 5
# Detection
DEFAULT_LOCK_RATIO = 1.0 / 3.0
DEFAULT_SPECTROGRAM_WINDOW_S = 2.4e-3
DEFAULT_SPECTROGRAM_SPACING_S = 0.2e-3
DEFAULT_PEAK_SNR = 10.0

MAX_SEED = 2**64

_SPEC_CONFIG = ConfigDict(frozen=True, extra="forbid")


# --- Physical inputs ---
class SphereSpec(BaseModel):
    """Levitated dielectric sphere.

    Parameters:
    - radius_m: Sphere radius.
    - density_kg_m3: Mass density (fused silica by default).
    - rel_permittivity: Relative permittivity at the trapping wavelength.
    - charge_count: Net charge in elementary charges.
    """

    model_config = _SPEC_CONFIG

    radius_m: float = Field(DEFAULT_RADIUS_M, gt=0)
    density_kg_m3: float = Field(DEFAULT_DENSITY_KG_M3, gt=0)
    rel_permittivity: float = Field(DEFAULT_REL_PERMITTIVITY, gt=1)
    charge_count: int = Field(1, ge=0)


class CavitySpec(BaseModel):
    """Single-mode Fabry-Perot cavity driven by the trapping laser.

    Exactly one of ``drive_amplitude_rad_s`` (pump rate) or ``target_photon_n``
    (mean intracavity photon number) must be supplied.

    ``detuning_rad_s`` is the red detuning of the laser from the empty cavity when
    ``detuning_reference`` is "bare", or the effective detuning at an on-axis
    antinode (cavity pulled by the sphere) when it is "effective".
    """

    model_config = _SPEC_CONFIG

    wavelength_m: float = Field(DEFAULT_WAVELENGTH_M, gt=0)
    waist_m: float = Field(DEFAULT_WAIST_M, gt=0)
    length_m: float = Field(DEFAULT_LENGTH_M, gt=0)
    finesse: float = Field(DEFAULT_FINESSE, gt=0)
    detuning_rad_s: float = Field(DEFAULT_DETUNING_RAD_S, allow_inf_nan=False)
    detuning_reference: Literal["bare", "effective"] = "bare"
    drive_amplitude_rad_s: float | None = Field(None, ge=0)
    target_photon_n: float | None = Field(None, ge=0)

    @model_validator(mode="after")
    def _exactly_one_drive(self) -> CavitySpec:
        if (self.drive_amplitude_rad_s is None) == (self.target_photon_n is None):
            msg = "exactly one of drive_amplitude_rad_s / target_photon_n must be given"
            raise ValueError(msg)
        return self


class PaulTrapSpec(BaseModel):
    """Quadrupole Paul trap: drive angular frequency, voltage amplitude and length scale r0."""

    model_config = _SPEC_CONFIG

    drive_freq_rad_s: float = Field(DEFAULT_DRIVE_FREQ_RAD_S, gt=0)
    voltage_v: float = Field(DEFAULT_VOLTAGE_V, gt=0)
    scale_m: float = Field(DEFAULT_SCALE_M, gt=0)


class GasSpec(BaseModel):
    """Background gas bath (N2 at room temperature by default)."""

    model_config = _SPEC_CONFIG

    pressure_pa: float = Field(DEFAULT_PRESSURE_PA, ge=0)
    temperature_k: float = Field(DEFAULT_TEMPERATURE_K, gt=0)
    molecule_mass_kg: float = Field(N2_MOLECULE_MASS, gt=0)


# --- Numerical settings ---
class NoiseConfig(BaseModel):
    """Stochastic forcing switches and the master seed of the counter-based generator."""

    model_config = _SPEC_CONFIG

    thermal_on: bool = True
    shot_noise_on: bool = False
    seed: int = Field(0, ge=0, lt=MAX_SEED)
    rng_algorithm: Literal["philox"] = "philox"


class IntegratorConfig(BaseModel):
    """Time stepping.

    Parameters:
    - dt_s: Integration step.
    - duration_s: Simulated time.
    - record_stride: Steps between recorded samples.
    - scheme: "euler-maruyama" (velocity-first ordering) or "stochastic-heun".
    - cavity_mode: "resolved" integrates the field, "adiabatic" slaves it to the position,
      "frozen" pins it at its steady-state value.
    - initial_temperature_k: Temperature of the initial thermal position and velocity draw (defaults to the gas temperature).
    """

    model_config = _SPEC_CONFIG

    dt_s: float = Field(DEFAULT_DT_S, gt=0)
    duration_s: float = Field(DEFAULT_DURATION_S, gt=0)
    record_stride: int = Field(DEFAULT_RECORD_STRIDE, ge=1)
    scheme: Literal["euler-maruyama", "stochastic-heun"] = "stochastic-heun"
    cavity_mode: Literal["resolved", "adiabatic", "frozen"] = "resolved"
    initial_temperature_k: float | None = Field(None, ge=0)

    @model_validator(mode="after")
    def _duration_covers_records(self) -> IntegratorConfig:
        if self.duration_s < self.dt_s * self.record_stride:
            msg = "duration_s must cover at least one recorded sample"
            raise ValueError(msg)
        return self


class DetectionSpec(BaseModel):
    """Heterodyne detector and spectral-estimation settings.

    ``omega_het_rad_s`` defaults to the effective detuning (beat at the detuning).
    ``sample_rate_hz`` defaults to the trajectory record rate.
    """

    model_config = _SPEC_CONFIG

    omega_het_rad_s: float | None = Field(None, gt=0)
    lock_ratio: float = Field(DEFAULT_LOCK_RATIO, ge=0)
    sample_rate_hz: float | None = Field(None, gt=0)
    white_noise_psd: float = Field(0.0, ge=0)
    source: Literal["detector", "position-x", "position-y", "position-z"] = "detector"
    segment_length: int | None = Field(None, ge=2)
    overlap_fraction: float = Field(0.5, ge=0, lt=1)
    window: str = "hann"
    spectrogram_window_s: float = Field(DEFAULT_SPECTROGRAM_WINDOW_S, gt=0)
    spectrogram_spacing_s: float = Field(DEFAULT_SPECTROGRAM_SPACING_S, gt=0)
    peak_snr: float = Field(DEFAULT_PEAK_SNR, gt=0)


class OutputSpec(BaseModel):
    """Where and how artifacts are written. Excluded from the config fingerprint."""

    model_config = _SPEC_CONFIG

    directory: str | None = None
    trajectory_format: Literal["csv", "binary"] = "csv"
    gnuplot: bool = False


class SweepSpec(BaseModel):
    """Ladder of runs: background pressures (mbar) or optical well indices."""

    model_config = _SPEC_CONFIG

    kind: Literal["pressure", "wells"] = "pressure"
    pressures_mbar: tuple[float, ...] = ()
    wells: tuple[int, ...] = ()
    settle_s: float = Field(0.0, ge=0)

    @field_validator("pressures_mbar")
    @classmethod
    def _positive_pressures(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(p < 0 or not math.isfinite(p) for p in v):
            msg = "pressures must be finite and non-negative"
            raise ValueError(msg)
        return v

    @field_validator("wells")
    @classmethod
    def _non_negative_wells(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(n < 0 for n in v):
            msg = "well indices must be non-negative"
            raise ValueError(msg)
        return v


class ExperimentConfig(BaseModel):
    """Complete physical and numerical description of one run."""

    model_config = _SPEC_CONFIG

    sphere: SphereSpec = Field(default_factory=SphereSpec)
    cavity: CavitySpec = Field(default_factory=lambda: CavitySpec(target_photon_n=DEFAULT_PHOTON_N))
    paul: PaulTrapSpec = Field(default_factory=PaulTrapSpec)
    gas: GasSpec = Field(default_factory=GasSpec)
    well_index: int = Field(0, ge=0)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    detection: DetectionSpec = Field(default_factory=DetectionSpec)
    outputs: OutputSpec = Field(default_factory=OutputSpec)
    sweep: SweepSpec | None = None
    ensemble_size: int = Field(1, ge=1)

    def canonical_json(self) -> bytes:
        """Serialize the physics/numerics part of the config with sorted keys."""
        payload = self.model_dump(mode="json", exclude={"outputs"})
        return orjson.dumps(payload, option=orjson.OPT_SORT_KEYS)

    def fingerprint(self) -> str:
        """Return the sha256 hex digest of the canonical config (outputs excluded)."""
        return hashlib.sha256(self.canonical_json()).hexdigest()


# --- Records ---
class FrequencyObservation(BaseModel):
    """Measured well and secular angular frequencies with one-sigma uncertainties."""

    model_config = _SPEC_CONFIG

    omega_M: float = Field(..., ge=0, description="Mechanical (optical well) angular frequency, rad/s.")
    omega_s: float = Field(..., gt=0, description="Radial secular angular frequency, rad/s.")
    omega_M_uncertainty: float = Field(0.0, ge=0)
    omega_s_uncertainty: float = Field(0.0, ge=0)


class InferenceResult(BaseModel):
    """Photon number and charge recovered from a frequency observation.

    Intervals are 95% bounds propagated from the observation uncertainties;
    ``charge_interval`` is in elementary charges. ``residual`` is the distance of
    the continuous charge estimate from the reported integer.
    """

    photon_n: float = Field(..., ge=0)
    photon_n_interval: tuple[float, float]
    charge_count: int = Field(..., ge=0)
    charge_coulomb: float = Field(..., ge=0)
    charge_interval: tuple[float, float]
    residual: float = Field(..., ge=0)
    branch_flags: list[str] = Field(default_factory=list)


class FileRecord(BaseModel):
    """One emitted artifact: path relative to the run directory, checksum and size."""

    path: str
    sha256: str
    size_bytes: int = Field(..., ge=0)


class RunManifest(BaseModel):
    """Provenance record written last, after every artifact of a run."""

    subcommand: str
    config_hash: str
    seed: int
    tool_version: str = TOOL_VERSION
    started_at: datetime
    finished_at: datetime
    files: list[FileRecord] = Field(default_factory=list)
    config: dict[str, Any]


# --- Settings and Configuration ---
class Settings(BaseSettings):
    """Process-level configuration read from ``HYBRIDTRAP_*`` environment variables or ``.env``."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="HYBRIDTRAP_",
        extra="ignore",
    )

    workers: int = Field(1, ge=1, description="Size of the worker pool for ensembles and sweep points.")
    log_level: str = Field("INFO", description="Minimum loguru level written to stderr.")
    output_dir: str = Field("runs", description="Artifact directory when neither --out nor outputs.directory is set.")
    noise_block_steps: int = Field(
        4096,
        ge=1,
        description="Steps of pre-drawn noise per generator call; does not change the random stream.",
    )

    @field_validator("log_level")
    @classmethod
    def _normalize_log_level(cls, v: str) -> str:
        """Accept lowercase level names from the environment."""
        return v.strip().upper()
