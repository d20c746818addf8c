"""Pressure and well-index ladders.

Each ladder point is a full config. Points are simulated on a bounded joblib
pool; the parent collects results in ladder order and writes them, so output is
independent of the worker count. Every point starts from a thermal draw at its
predicted steady-state temperature so the recorded spectrum is already settled.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import TYPE_CHECKING

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pathvalidate import sanitize_filename
from tabulate import tabulate

from src.services.constants import mbar_to_pa, pa_to_mbar
from src.services.dynamics import NOISE_BLOCK_STEPS, simulate
from src.services.errors import AnalysisError, ConfigValidationError, InvalidSegmentationError
from src.services.linear_model import (
    cooling_rate,
    excursion_amplitude,
    linearize_at,
    phase_excursion,
    phonon_occupancy,
    steady_state_temperature,
    well_site,
)
from src.services.params import derive_from_config
from src.services.spectral import (
    PeakSet,
    PowerSpectrum,
    detector_series,
    find_sidebands,
    lines_for_config,
    temperature_from_trajectory,
    welch_psd,
)

if TYPE_CHECKING:
    from src.models import ExperimentConfig
    from src.services.dynamics import Trajectory

LADDER_FIELDS = 3
DECADE = "decade"


@dataclass(frozen=True, slots=True)
class SweepPoint:
    """One ladder point: its position, a filesystem-safe label and its config."""

    index: int
    label: str
    config: ExperimentConfig


@dataclass(frozen=True, slots=True)
class Prediction:
    """Closed-form steady state of one point."""

    gamma_M: float
    gamma_opt_cycle: float
    t_eff: float
    n_p: float


@dataclass(frozen=True, slots=True)
class SweepRow:
    """Summary row of one ladder point."""

    label: str
    pressure_mbar: float
    well_index: int
    gamma_M: float
    gamma_opt_cycle: float
    predicted_t_eff: float
    predicted_n_p: float
    measured_t_eff: float
    measured_n_p: float
    linear_sideband_power: float
    linear_sideband_rms: float


@dataclass(frozen=True, eq=False)
class SweepPointResult:
    """Analysed output of one point."""

    point: SweepPoint
    spectrum: PowerSpectrum
    peaks: PeakSet
    row: SweepRow


def _split_ladder(text: str, field_path: str) -> list[str]:
    parts = [p.strip() for p in text.split(":")]
    if len(parts) != LADDER_FIELDS or not all(parts):
        raise ConfigValidationError(field_path, f"expected START:STOP:STEP, got {text!r}")
    return parts


def parse_pressure_ladder(text: str) -> tuple[float, ...]:
    """Parse ``START:STOP:decade`` or ``START:STOP:COUNT`` (mbar) into log-spaced pressures.

    ``1e-2:1e-6:decade`` gives one point per decade, both ends included.
    """
    start_s, stop_s, step = _split_ladder(text, "sweep.pressures_mbar")
    try:
        start, stop = float(start_s), float(stop_s)
        count = round(abs(math.log10(stop / start))) + 1 if step == DECADE else int(step)
    except (ValueError, ZeroDivisionError) as err:
        raise ConfigValidationError("sweep.pressures_mbar", f"invalid pressure ladder {text!r}") from err
    if start <= 0 or stop <= 0 or count < 1:
        raise ConfigValidationError("sweep.pressures_mbar", "pressures must be positive and the count at least 1")
    return tuple(float(p) for p in np.geomspace(start, stop, count))


def parse_well_range(text: str) -> tuple[int, ...]:
    """Parse ``START:STOP:STEP`` into well indices, STOP included."""
    parts = _split_ladder(text, "sweep.wells")
    try:
        start, stop, step = (int(p) for p in parts)
    except ValueError as err:
        raise ConfigValidationError("sweep.wells", f"invalid well range {text!r}") from err
    if start < 0 or step <= 0 or stop < start:
        raise ConfigValidationError("sweep.wells", "need 0 <= START <= STOP and STEP > 0")
    return tuple(range(start, stop + 1, step))


def predict_point(config: ExperimentConfig) -> Prediction:
    """Return γ_M, the drive-cycle averaged Γ_opt and the two-bath steady state of a config."""
    params = derive_from_config(config)
    gamma_opt = 0.0
    if params.omega_M > 0:
        centre = linearize_at(0.0, params, config.paul)
        amplitude = excursion_amplitude(well_site(config.well_index, params), params.omega_T_sq, params.omega_M)
        swing = phase_excursion(amplitude, params)
        gamma_opt = cooling_rate(centre, params.kappa, math.sin(swing), swing).cycle_average or 0.0
    t_eff, _ = steady_state_temperature(params.gamma_M, gamma_opt, params.bath_temperature)
    n_p = phonon_occupancy(t_eff, params.omega_M) if params.omega_M > 0 else math.nan
    return Prediction(params.gamma_M, gamma_opt, t_eff, n_p)


def _point_config(
    base: ExperimentConfig, *, pressure_mbar: float | None = None, well: int | None = None
) -> ExperimentConfig:
    update: dict[str, object] = {}
    if pressure_mbar is not None:
        update["gas"] = base.gas.model_copy(update={"pressure_pa": mbar_to_pa(pressure_mbar)})
    if well is not None:
        update["well_index"] = well
    config = base.model_copy(update=update)
    start_temperature = predict_point(config).t_eff
    integrator = config.integrator.model_copy(update={"initial_temperature_k": start_temperature})
    return config.model_copy(update={"integrator": integrator})


def sweep_points(config: ExperimentConfig) -> list[SweepPoint]:
    """Expand the config's sweep section into ladder points.

    Raises:
    - ConfigValidationError: no sweep section or an empty ladder.
    """
    sweep = config.sweep
    if sweep is None:
        raise ConfigValidationError("sweep", "the config has no sweep section")
    points: list[SweepPoint] = []
    if sweep.kind == "pressure":
        if not sweep.pressures_mbar:
            raise ConfigValidationError("sweep.pressures_mbar", "the pressure ladder is empty")
        for i, pressure in enumerate(sweep.pressures_mbar):
            label = sanitize_filename(f"{i:02d}_p_{pressure:.3e}mbar")
            points.append(SweepPoint(i, label, _point_config(config, pressure_mbar=pressure)))
    else:
        if not sweep.wells:
            raise ConfigValidationError("sweep.wells", "the well list is empty")
        for i, well in enumerate(sweep.wells):
            label = sanitize_filename(f"{i:02d}_well_{well:03d}")
            points.append(SweepPoint(i, label, _point_config(config, well=well)))
    return points


def _after(traj: Trajectory, settle_s: float) -> Trajectory:
    if settle_s <= 0:
        return traj
    start = int(np.searchsorted(traj.t, traj.t[0] + settle_s))
    if len(traj) - start < 2:  # noqa: PLR2004
        msg = f"settle time {settle_s} s leaves fewer than two samples"
        raise InvalidSegmentationError(msg)
    return replace(traj, data=traj.data[start:])


def run_point(point: SweepPoint, block_steps: int = NOISE_BLOCK_STEPS) -> SweepPointResult:
    """Simulate and analyse one ladder point."""
    config = point.config
    params = derive_from_config(config)
    settle = config.sweep.settle_s if config.sweep else 0.0
    traj = _after(simulate(config, block_steps=block_steps), settle)
    det = config.detection
    series = detector_series(traj, det, params)
    spectrum = welch_psd(series, det.segment_length, det.overlap_fraction, det.window)
    peaks = find_sidebands(spectrum, lines_for_config(config, params), snr=det.peak_snr)

    prediction = predict_point(config)
    measured_t, measured_n = math.nan, math.nan
    if params.omega_M > 0:
        try:
            span = traj.t[-1] - traj.t[0]
            measured_t, measured_n = temperature_from_trajectory(traj, params.omega_M, params.mass, span)
        except AnalysisError as err:
            logger.warning("Point {}: no temperature estimate ({})", point.label, err)
    power = peaks.linear_family_amplitude()
    row = SweepRow(
        label=point.label,
        pressure_mbar=pa_to_mbar(config.gas.pressure_pa),
        well_index=config.well_index,
        gamma_M=prediction.gamma_M,
        gamma_opt_cycle=prediction.gamma_opt_cycle,
        predicted_t_eff=prediction.t_eff,
        predicted_n_p=prediction.n_p,
        measured_t_eff=measured_t,
        measured_n_p=measured_n,
        linear_sideband_power=power,
        linear_sideband_rms=math.sqrt(power),
    )
    logger.info("Point {} done: T_eff predicted {:.3e} K, measured {:.3e} K", point.label, prediction.t_eff, measured_t)
    return SweepPointResult(point, spectrum, peaks, row)


def run_sweep(
    config: ExperimentConfig, workers: int = 1, block_steps: int = NOISE_BLOCK_STEPS
) -> list[SweepPointResult]:
    """Run every ladder point and return the results in ladder order."""
    points = sweep_points(config)
    n_jobs = max(1, min(workers, len(points)))
    logger.info("Sweeping {} point(s) on {} worker(s)", len(points), n_jobs)
    if n_jobs == 1:
        return [run_point(p, block_steps) for p in points]
    return list(Parallel(n_jobs=n_jobs)(delayed(run_point)(p, block_steps) for p in points))


def summary_columns() -> list[str]:
    """Return the summary table column names."""
    return [f.name for f in fields(SweepRow)]


def summary_csv(rows: list[SweepRow]) -> str:
    """Render the summary rows as CSV with full precision."""
    lines = [",".join(summary_columns())]
    for row in rows:
        values = asdict(row)
        lines.append(",".join(v if isinstance(v, str) else f"{v:.17g}" for v in values.values()))
    return "\n".join(lines) + "\n"


def summary_text(rows: list[SweepRow]) -> str:
    """Render the summary rows as a plain-text table."""
    return tabulate([asdict(r) for r in rows], headers="keys", floatfmt=".4g", tablefmt="simple") + "\n"
