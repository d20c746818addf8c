"""Subcommand orchestration: run the services, write artifacts, record the manifest.

Each ``run_*`` function returns the JSON-ready result printed on stdout. Files
go to the run directory and the manifest is written last, listing every file
with its checksum.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Any

import orjson
from loguru import logger

from src.models import FrequencyObservation, RunManifest
from src.services import artifacts
from src.services.config_loader import load_config, validate_config
from src.services.config_loader import config_from_manifest as manifest_config
from src.services.dynamics import simulate
from src.services.ensemble import escaped_members, simulate_ensemble
from src.services.errors import ConfigNotFoundError, ConfigValidationError, InsufficientDataError
from src.services.inference import extract_observation, fit_cooling_rate, infer_charge
from src.services.linear_model import (
    PEAK_DRIVE_PHASE,
    cooling_rate,
    excursion_amplitude,
    instantaneous_equilibrium,
    linearize_at,
    phase_excursion,
    secular_frequency,
    well_scan,
    well_site,
)
from src.services.params import derive_from_config, to_flat_dict
from src.services.spectral import (
    detector_series,
    find_sidebands,
    lines_for_config,
    spectrogram,
    welch_psd,
)
from src.services.sweep import parse_pressure_ladder, parse_well_range, run_sweep, summary_csv, summary_text

if TYPE_CHECKING:
    from src.models import ExperimentConfig, Settings
    from src.services.dynamics import Trajectory


@dataclass
class RunContext:
    """Resolved inputs of one invocation and the files it has emitted so far."""

    subcommand: str
    config: ExperimentConfig
    settings: Settings
    out_dir: Path
    gnuplot: bool = False
    manifest_path: Path | None = None
    source_manifest: RunManifest | None = None
    started_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    files: list[Path] = field(default_factory=list)

    def emit(self, paths: Path | list[Path]) -> None:
        """Record emitted files for the manifest."""
        self.files.extend(paths if isinstance(paths, list) else [paths])


def resolve_output_dir(out: Path | None, config: ExperimentConfig, settings: Settings) -> Path:
    """Return --out, else outputs.directory, else the settings default."""
    if out is not None:
        return out
    if config.outputs.directory:
        return Path(config.outputs.directory)
    return Path(settings.output_dir)


def build_context(
    subcommand: str,
    settings: Settings,
    *,
    config_ref: str | None,
    manifest: Path | None = None,
    overrides: list[str] | tuple[str, ...] = (),
    seed: int | None = None,
    out: Path | None = None,
    gnuplot: bool = False,
) -> RunContext:
    """Load the config (from a file, a preset or a prior manifest) and resolve the run directory.

    Raises:
    - ConfigNotFoundError: neither a config nor a manifest was given, or it is missing.
    """
    source_manifest = None
    if manifest is not None:
        config, source_manifest = manifest_config(manifest, overrides, seed)
    elif config_ref is not None:
        config = load_config(config_ref, overrides, seed)
    else:
        msg = "one of --config or --manifest is required"
        raise ConfigNotFoundError(msg)
    out_dir = resolve_output_dir(out, config, settings)
    return RunContext(
        subcommand=subcommand,
        config=config,
        settings=settings,
        out_dir=out_dir,
        gnuplot=gnuplot or config.outputs.gnuplot,
        manifest_path=manifest,
        source_manifest=source_manifest,
    )


def finalize(ctx: RunContext, result: dict[str, Any]) -> dict[str, Any]:
    """Write the result JSON and then the manifest; return the result with the manifest path."""
    ctx.emit(artifacts.write_json(ctx.out_dir / f"{ctx.subcommand}.json", result))
    manifest = RunManifest(
        subcommand=ctx.subcommand,
        config_hash=ctx.config.fingerprint(),
        seed=ctx.config.noise.seed,
        started_at=ctx.started_at,
        finished_at=datetime.now(timezone.utc),
        files=[artifacts.file_record(p, ctx.out_dir) for p in ctx.files],
        config=ctx.config.model_dump(mode="json"),
    )
    path = artifacts.write_manifest(ctx.out_dir, manifest)
    return {**result, "manifest": path.as_posix()}


# --- derive / linearize ---
def run_derive(ctx: RunContext) -> dict[str, Any]:
    """Return every derived parameter as flat SI floats."""
    params = derive_from_config(ctx.config)
    return finalize(ctx, {"config_hash": ctx.config.fingerprint(), "derived": to_flat_dict(params)})


def run_linearize(ctx: RunContext, well: int | None = None, drive_phase: float = PEAK_DRIVE_PHASE) -> dict[str, Any]:
    """Linearize about the instantaneous equilibrium of a well at a drive phase."""
    config = ctx.config
    params = derive_from_config(config)
    index = config.well_index if well is None else well
    site = well_site(index, params, drive_phase)
    amplitude = excursion_amplitude(site, params.omega_T_sq, params.omega_M) if params.omega_M > 0 else 0.0
    x0 = instantaneous_equilibrium(site, amplitude)
    model = linearize_at(x0, params, config.paul)
    swing = phase_excursion(amplitude, params)
    cycle = None
    if model.omega_M > 0:
        centre = linearize_at(0.0, params, config.paul)
        cycle = cooling_rate(centre, params.kappa, math.sin(swing), swing).cycle_average
    scan = [asdict(row) for row in well_scan(params, [index])]
    result = {
        "config_hash": config.fingerprint(),
        "well_index": index,
        "drive_phase": drive_phase,
        "equilibrium_offset": x0,
        "excursion_amplitude": amplitude,
        "phase_excursion": swing,
        "gamma_opt_cycle_average": cycle,
        "model": asdict(model),
        "well": scan[0],
    }
    return finalize(ctx, result)


# --- simulate ---
def run_simulate(ctx: RunContext, ensemble: int | None = None) -> dict[str, Any]:
    """Integrate one trajectory or an ensemble and write them in the configured format."""
    config = ctx.config
    size = ensemble or config.ensemble_size
    fmt = config.outputs.trajectory_format
    block = ctx.settings.noise_block_steps
    if size == 1:
        trajectories = [simulate(config, block_steps=block)]
        stems = ["trajectory"]
    else:
        trajectories = simulate_ensemble(config, size, ctx.settings.workers, block)
        stems = [f"trajectory_{i:03d}" for i in range(size)]
    for traj, stem in zip(trajectories, stems, strict=True):
        ctx.emit(artifacts.write_trajectory(ctx.out_dir, traj, fmt, stem))
    result = {
        "config_hash": config.fingerprint(),
        "seed": config.noise.seed,
        "members": size,
        "escaped_members": escaped_members(trajectories, derive_from_config(config), config.well_index),
        "samples": len(trajectories[0]),
        "sample_rate_hz": trajectories[0].sample_rate,
        "format": fmt,
    }
    return finalize(ctx, result)


def _trajectory_from_manifest(ctx: RunContext) -> Trajectory | None:
    if ctx.source_manifest is None or ctx.manifest_path is None:
        return None
    params = derive_from_config(ctx.config)
    root = ctx.manifest_path.parent
    for record in ctx.source_manifest.files:
        path = root / record.path
        if record.path in {"trajectory.bin", "trajectory_000.bin"} and path.is_file():
            return artifacts.read_trajectory_binary(path)
        if record.path in {"trajectory.csv", "trajectory_000.csv"} and path.is_file():
            return artifacts.read_trajectory_csv(
                path,
                omega_M=params.omega_M,
                omega_d=ctx.config.paul.drive_freq_rad_s,
                config_hash=ctx.source_manifest.config_hash,
                seed=ctx.source_manifest.seed,
            )
    return None


def obtain_trajectory(ctx: RunContext) -> Trajectory:
    """Reuse the trajectory recorded in a source manifest, or simulate one."""
    traj = _trajectory_from_manifest(ctx)
    if traj is not None:
        logger.info("Reusing recorded trajectory ({} samples)", len(traj))
        return traj
    return simulate(ctx.config, block_steps=ctx.settings.noise_block_steps)


# --- spectrum / spectrogram ---
def run_spectrum(ctx: RunContext) -> dict[str, Any]:
    """Write the Welch PSD of the configured signal and the classified peaks."""
    config = ctx.config
    params = derive_from_config(config)
    det = config.detection
    series = detector_series(obtain_trajectory(ctx), det, params)
    spec = welch_psd(series, det.segment_length, det.overlap_fraction, det.window)
    peaks = find_sidebands(spec, lines_for_config(config, params), snr=det.peak_snr)
    ctx.emit(artifacts.write_spectrum_csv(ctx.out_dir / "spectrum.csv", spec))
    ctx.emit(artifacts.write_json(ctx.out_dir / "peaks.json", peaks.to_list()))
    if ctx.gnuplot:
        ctx.emit(artifacts.write_gnuplot_spectrum(ctx.out_dir / "spectrum", spec))
    result = {
        "config_hash": config.fingerprint(),
        "source": det.source,
        "resolution_hz": spec.resolution,
        "segments": spec.segment_count,
        "peaks": peaks.to_list(),
    }
    return finalize(ctx, result)


def run_spectrogram(ctx: RunContext) -> dict[str, Any]:
    """Write the windowed PSDs and the decay fits of the ω_M-family features."""
    config = ctx.config
    params = derive_from_config(config)
    det = config.detection
    series = detector_series(obtain_trajectory(ctx), det, params)
    gram = spectrogram(series, det.spectrogram_window_s, det.spectrogram_spacing_s, window=det.window)
    ctx.emit(artifacts.write_spectrogram_csv(ctx.out_dir / "spectrogram.csv", gram))
    if ctx.gnuplot:
        ctx.emit(artifacts.write_gnuplot_spectrogram(ctx.out_dir / "spectrogram", gram))
    result: dict[str, Any] = {
        "config_hash": config.fingerprint(),
        "windows": len(gram),
        "window_duration_s": gram.window_duration,
        "window_spacing_s": gram.window_spacing,
        "cooling": None,
    }
    try:
        fit = fit_cooling_rate(gram, lines_for_config(config, params), snr=det.peak_snr)
    except InsufficientDataError as err:
        logger.warning("No cooling-rate estimate: {}", err)
    else:
        result["cooling"] = {
            "gamma_opt": fit.gamma_opt,
            "gamma_opt_stderr": fit.gamma_opt_stderr,
            "quadratic_ratio": fit.quadratic_ratio,
            "features": [asdict(f) for f in fit.features],
            "quadratic_features": [asdict(f) for f in fit.quadratic_features],
        }
    return finalize(ctx, result)


# --- infer ---
def _read_observation(path: Path) -> FrequencyObservation:
    try:
        payload = orjson.loads(path.read_bytes())
    except FileNotFoundError as err:
        msg = f"observation not found: {path}"
        raise ConfigNotFoundError(msg) from err
    except orjson.JSONDecodeError as err:
        raise ConfigValidationError(str(path), f"invalid observation JSON: {err}") from err
    try:
        return FrequencyObservation.model_validate(payload)
    except ValueError as err:
        raise ConfigValidationError(str(path), str(err)) from err


def run_infer(ctx: RunContext, observation: Path | None = None, spectrum: Path | None = None) -> dict[str, Any]:
    """Recover photon number and charge from an observation record or a spectrum CSV."""
    config = ctx.config
    params = derive_from_config(config)
    if observation is not None:
        obs = _read_observation(observation)
    elif spectrum is not None:
        if not spectrum.is_file():
            msg = f"spectrum not found: {spectrum}"
            raise ConfigNotFoundError(msg)
        predicted_s = secular_frequency(params, config.paul, params.photon_n)
        obs = extract_observation(
            artifacts.read_spectrum_csv(spectrum),
            params.omega_M,
            predicted_s,
            snr=config.detection.peak_snr,
        )
    else:
        msg = "infer needs --observation or --spectrum"
        raise ConfigNotFoundError(msg)
    inferred = infer_charge(obs, params, config.paul)
    result = {
        "config_hash": config.fingerprint(),
        "observation": obs.model_dump(),
        "result": inferred.model_dump(),
    }
    return finalize(ctx, result)


# --- sweep ---
def run_sweep_command(ctx: RunContext, pressure: str | None = None, wells: str | None = None) -> dict[str, Any]:
    """Run a pressure or well ladder; one output set per point plus a summary table."""
    config = ctx.config
    base_sweep = config.sweep.model_dump() if config.sweep else {}
    if pressure is not None:
        sweep = {**base_sweep, "kind": "pressure", "pressures_mbar": parse_pressure_ladder(pressure)}
        config = validate_config({**config.model_dump(mode="json"), "sweep": sweep})
    elif wells is not None:
        sweep = {**base_sweep, "kind": "wells", "wells": parse_well_range(wells)}
        config = validate_config({**config.model_dump(mode="json"), "sweep": sweep})
    ctx.config = config

    results = run_sweep(config, ctx.settings.workers, ctx.settings.noise_block_steps)
    for res in results:
        point_dir = ctx.out_dir / res.point.label
        ctx.emit(artifacts.write_spectrum_csv(point_dir / "spectrum.csv", res.spectrum))
        ctx.emit(artifacts.write_json(point_dir / "peaks.json", res.peaks.to_list()))
        if ctx.gnuplot:
            ctx.emit(artifacts.write_gnuplot_spectrum(point_dir / "spectrum", res.spectrum))
    rows = [r.row for r in results]
    ctx.emit(artifacts.atomic_write_text(ctx.out_dir / "summary.csv", summary_csv(rows)))
    ctx.emit(artifacts.atomic_write_text(ctx.out_dir / "summary.txt", summary_text(rows)))
    logger.info("Sweep summary:\n{}", summary_text(rows))
    result = {
        "config_hash": config.fingerprint(),
        "kind": config.sweep.kind if config.sweep else None,
        "points": [asdict(r) for r in rows],
    }
    return finalize(ctx, result)
