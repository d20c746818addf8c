"""Ensembles of independent trajectories on a bounded joblib worker pool.

Member i always draws from the stream (seed, i), and results come back in
submission order, so the ensemble is identical for any worker count.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import humanize
import numpy as np
from joblib import Parallel, delayed
from loguru import logger

from src.services.constants import BOLTZMANN
from src.services.dynamics import NOISE_BLOCK_STEPS, axial_energy, left_well, simulate

if TYPE_CHECKING:
    from src.models import ExperimentConfig
    from src.services.dynamics import Trajectory
    from src.services.params import DerivedParams


def simulate_ensemble(
    config: ExperimentConfig,
    size: int,
    workers: int = 1,
    block_steps: int = NOISE_BLOCK_STEPS,
) -> list[Trajectory]:
    """Integrate ``size`` members of ``config``.

    Parameters:
    - config: Validated experiment config.
    - size: Number of members.
    - workers: Upper bound on concurrent worker processes.
    - block_steps: Noise block length forwarded to ``simulate``.

    Returns:
    - Trajectories ordered by member index.
    """
    if size < 1:
        msg = f"ensemble size must be at least 1, got {size}"
        raise ValueError(msg)
    n_jobs = max(1, min(workers, size))
    logger.info("Running {} trajectories on {} worker(s)", humanize.intcomma(size), n_jobs)
    if n_jobs == 1:
        return [simulate(config, member=i, block_steps=block_steps) for i in range(size)]
    runner = Parallel(n_jobs=n_jobs)
    return list(runner(delayed(simulate)(config, member=i, block_steps=block_steps) for i in range(size)))


def mean_axial_energy(trajectories: list[Trajectory], params: DerivedParams, well_index: int) -> np.ndarray:
    """Return the ensemble-averaged axial energy series."""
    energies = [axial_energy(traj, params, well_index) for traj in trajectories]
    return np.mean(np.vstack(energies), axis=0)


def mean_kinetic_temperature(trajectories: list[Trajectory], mass: float, start_index: int = 0) -> np.ndarray:
    """Return the per-axis kinetic temperature m⟨v²⟩/k_B averaged over members and samples from ``start_index``."""
    velocities = np.concatenate([traj.data[start_index:, 4:7] for traj in trajectories], axis=0)
    return mass * np.mean(velocities**2, axis=0) / BOLTZMANN


def escaped_members(trajectories: list[Trajectory], params: DerivedParams, well_index: int) -> list[int]:
    """Return the indices of members that hopped out of well ``well_index``."""
    escaped = [traj.member for traj in trajectories if left_well(traj, params, well_index)]
    if escaped:
        logger.warning("{} of {} member(s) left well {}", len(escaped), len(trajectories), well_index)
    return escaped
