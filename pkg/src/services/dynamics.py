"""Stochastic integration of the coupled 3D particle and cavity-field equations.

The particle feels the gradient of the standing-wave potential -ħA|a|²cos²(kx)𝓕(y,z),
the Paul potential ½mω_T²(x² + y² - 2z²)sin(ω_d t), gas damping and thermal kicks.
The field obeys ȧ = iΔ^x(r)a - i𝓔 - (κ/2)a + η with Δ^x(r) = Δ - A cos²(kx)𝓕(y,z);
its stiff linear part is advanced with an exponential integrator.

The hot loop runs on plain floats; noise is drawn in blocks from a Philox stream
keyed by (seed, member index) so replays are bit-identical.
"""

from __future__ import annotations

import cmath
import math
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING

import humanize
import numpy as np
from loguru import logger

from src.services.constants import BOLTZMANN, HBAR
from src.services.errors import ConfigValidationError, IntegrationDivergedError
from src.services.linear_model import excursion_amplitude, well_site
from src.services.params import derive_from_config

if TYPE_CHECKING:
    from collections.abc import Sequence

    from src.models import ExperimentConfig, IntegratorConfig, NoiseConfig, PaulTrapSpec
    from src.services.params import DerivedParams

TRAJECTORY_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "re_a", "im_a")
NOISE_COLUMNS = 5
NOISE_BLOCK_STEPS = 4096

# dt limits as fractions of the fastest mechanical period and of 2/κ
MECHANICAL_STEP_FRACTION = 0.02
CAVITY_STEP_FRACTION = 0.2

_PHI1_SERIES_LIMIT = 1e-6


@dataclass(frozen=True, slots=True)
class SimState:
    """Particle position/velocity (x axial, y and z radial) and the complex cavity field."""

    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    field: complex
    time: float = 0.0

    def is_finite(self) -> bool:
        """Return True when every component is finite."""
        values = (*self.position, *self.velocity, self.field.real, self.field.imag, self.time)
        return all(math.isfinite(v) for v in values)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled states with run metadata.

    ``data`` has one row per sample and the columns of TRAJECTORY_COLUMNS.
    """

    data: np.ndarray
    sample_interval: float
    config_hash: str
    seed: int
    member: int = 0
    omega_M: float = 0.0
    omega_d: float = 0.0

    def __post_init__(self) -> None:
        """Check the sample layout and time stamps."""
        if self.data.ndim != 2 or self.data.shape[1] != len(TRAJECTORY_COLUMNS):  # noqa: PLR2004
            msg = f"trajectory data must have shape (n, {len(TRAJECTORY_COLUMNS)}), got {self.data.shape}"
            raise ValueError(msg)
        if self.data.shape[0] > 1 and not np.all(np.diff(self.data[:, 0]) > 0):
            msg = "trajectory time stamps must be strictly increasing"
            raise ValueError(msg)

    def __len__(self) -> int:
        """Number of recorded samples."""
        return int(self.data.shape[0])

    def column(self, name: str) -> np.ndarray:
        """Return one named column."""
        return self.data[:, TRAJECTORY_COLUMNS.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def x(self) -> np.ndarray:
        return self.data[:, 1]

    @property
    def y(self) -> np.ndarray:
        return self.data[:, 2]

    @property
    def z(self) -> np.ndarray:
        return self.data[:, 3]

    @property
    def vx(self) -> np.ndarray:
        return self.data[:, 4]

    @property
    def field(self) -> np.ndarray:
        """Complex cavity amplitude per sample."""
        return self.data[:, 7] + 1j * self.data[:, 8]

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.sample_interval

    def state(self, index: int) -> SimState:
        """Return sample ``index`` as a SimState."""
        t, x, y, z, vx, vy, vz, re_a, im_a = (float(v) for v in self.data[index])
        return SimState((x, y, z), (vx, vy, vz), complex(re_a, im_a), t)


@dataclass(frozen=True, slots=True)
class _Coefficients:
    """Per-run constants of the equations of motion, pre-multiplied for the hot loop."""

    k: float
    axial: float
    radial: float
    envelope: float
    gamma: float
    omega_T_sq: float
    omega_d: float
    detuning: float
    coupling_A: float
    half_kappa: float
    pump: float
    alpha_bar: complex
    dt: float
    kick_std: float
    shot_std: float

    @classmethod
    def build(
        cls,
        params: DerivedParams,
        omega_d: float,
        dt: float,
        *,
        thermal_on: bool,
        shot_noise_on: bool,
    ) -> _Coefficients:
        m = params.mass
        kick = math.sqrt(2.0 * params.gamma_M * BOLTZMANN * params.bath_temperature * dt / m) if thermal_on else 0.0
        return cls(
            k=params.wavenumber_k,
            axial=-HBAR * params.wavenumber_k * params.coupling_A / m,
            radial=-4.0 * HBAR * params.coupling_A / (m * params.waist_m**2),
            envelope=2.0 / params.waist_m**2,
            gamma=params.gamma_M,
            omega_T_sq=params.omega_T_sq,
            omega_d=omega_d,
            detuning=params.detuning,
            coupling_A=params.coupling_A,
            half_kappa=0.5 * params.kappa,
            pump=params.drive_amplitude,
            alpha_bar=params.alpha_bar,
            dt=dt,
            kick_std=kick,
            shot_std=math.sqrt(0.5 * params.kappa * dt) if shot_noise_on else 0.0,
        )


def thermal_kick_std(gamma_M: float, temperature: float, mass: float, dt: float) -> float:
    """Return the per-axis velocity kick standard deviation √(2γ_M k_B T dt/m)."""
    return math.sqrt(2.0 * gamma_M * BOLTZMANN * temperature * dt / mass)


def trajectory_stream(seed: int, member: int) -> np.random.Generator:
    """Return the Philox generator owned by ensemble member ``member`` of master ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(member,))))


def _acceleration(
    c: _Coefficients,
    x: float,
    y: float,
    z: float,
    vx: float,
    vy: float,
    vz: float,
    intensity: float,
    drive: float,
) -> tuple[float, float, float]:
    env = math.exp(-c.envelope * (y * y + z * z))
    kx = c.k * x
    cos_kx = math.cos(kx)
    optical = intensity * env
    paul = c.omega_T_sq * drive
    radial = c.radial * optical * cos_kx * cos_kx
    return (
        c.axial * optical * math.sin(2.0 * kx) - c.gamma * vx - paul * x,
        radial * y - c.gamma * vy - paul * y,
        radial * z - c.gamma * vz + 2.0 * paul * z,
    )


def _field_rate(c: _Coefficients, x: float, y: float, z: float) -> complex:
    # iΔ^x(r) - κ/2
    cos_kx = math.cos(c.k * x)
    shift = c.coupling_A * cos_kx * cos_kx * math.exp(-c.envelope * (y * y + z * z))
    return complex(-c.half_kappa, c.detuning - shift)


def _slaved_field(c: _Coefficients, x: float, y: float, z: float) -> complex:
    return 1j * c.pump / _field_rate(c, x, y, z)


def _field_advance(c: _Coefficients, a: complex, rate: complex) -> complex:
    z = rate * c.dt
    growth = cmath.exp(z)
    phi = c.dt * (1.0 + 0.5 * z) if abs(z) < _PHI1_SERIES_LIMIT else (growth - 1.0) / rate
    return growth * a - 1j * c.pump * phi


def _advance(
    c: _Coefficients,
    state: tuple[float, float, float, float, float, float, complex],
    t: float,
    draws: Sequence[float],
    *,
    heun: bool,
    mode: str,
) -> tuple[float, float, float, float, float, float, complex]:
    x, y, z, vx, vy, vz, a = state
    dt = c.dt
    dvx = c.kick_std * draws[0]
    dvy = c.kick_std * draws[1]
    dvz = c.kick_std * draws[2]
    shot = complex(c.shot_std * draws[3], c.shot_std * draws[4])
    ax, ay, az = _acceleration(c, x, y, z, vx, vy, vz, a.real * a.real + a.imag * a.imag, math.sin(c.omega_d * t))

    if not heun:
        # velocity first, then position with the new velocity
        nvx = vx + ax * dt + dvx
        nvy = vy + ay * dt + dvy
        nvz = vz + az * dt + dvz
        nx = x + nvx * dt
        ny = y + nvy * dt
        nz = z + nvz * dt
        if mode == "resolved":
            na = _field_advance(c, a, _field_rate(c, x, y, z)) + shot
        elif mode == "adiabatic":
            na = _slaved_field(c, nx, ny, nz)
        else:
            na = a
        return nx, ny, nz, nvx, nvy, nvz, na

    px = x + vx * dt
    py = y + vy * dt
    pz = z + vz * dt
    pvx = vx + ax * dt + dvx
    pvy = vy + ay * dt + dvy
    pvz = vz + az * dt + dvz
    rate0 = 0j
    if mode == "resolved":
        rate0 = _field_rate(c, x, y, z)
        pa = _field_advance(c, a, rate0) + shot
    elif mode == "adiabatic":
        pa = _slaved_field(c, px, py, pz)
    else:
        pa = a
    bx, by, bz = _acceleration(
        c, px, py, pz, pvx, pvy, pvz, pa.real * pa.real + pa.imag * pa.imag, math.sin(c.omega_d * (t + dt))
    )
    nvx = vx + 0.5 * (ax + bx) * dt + dvx
    nvy = vy + 0.5 * (ay + by) * dt + dvy
    nvz = vz + 0.5 * (az + bz) * dt + dvz
    nx = x + 0.5 * (vx + pvx) * dt
    ny = y + 0.5 * (vy + pvy) * dt
    nz = z + 0.5 * (vz + pvz) * dt
    if mode == "resolved":
        na = _field_advance(c, a, 0.5 * (rate0 + _field_rate(c, px, py, pz))) + shot
    elif mode == "adiabatic":
        na = _slaved_field(c, nx, ny, nz)
    else:
        na = a
    return nx, ny, nz, nvx, nvy, nvz, na


def force_field(state: SimState, params: DerivedParams, paul: PaulTrapSpec, t: float) -> tuple[float, float, float]:
    """Return the deterministic acceleration (m/s²) on the particle at time ``t``.

    Axial: W|a|²sin(2kx)𝓕 - γ_M ẋ - ω_T² x sin(ω_d t), W = -ħkA/m.
    Radial: exact gradient of the optical envelope, damping and the Paul term
    (+2ω_T² z sin(ω_d t) on z).
    """
    c = _Coefficients.build(params, paul.drive_freq_rad_s, 1.0, thermal_on=False, shot_noise_on=False)
    a = state.field
    return _acceleration(
        c, *state.position, *state.velocity, a.real * a.real + a.imag * a.imag, math.sin(c.omega_d * t)
    )


def adiabatic_field(position: Sequence[float], params: DerivedParams) -> complex:
    """Return the instantaneous steady field a = i𝓔/(iΔ^x(r) - κ/2) at ``position``."""
    c = _Coefficients.build(params, 0.0, 1.0, thermal_on=False, shot_noise_on=False)
    x, y, z = position
    return _slaved_field(c, x, y, z)


def step(
    state: SimState,
    params: DerivedParams,
    paul: PaulTrapSpec,
    noise: NoiseConfig,
    integrator: IntegratorConfig,
    draws: Sequence[float] = (0.0,) * NOISE_COLUMNS,
) -> SimState:
    """Advance one integrator step from ``state``.

    Parameters:
    - draws: Five standard normals (three thermal kicks, two shot-noise quadratures).

    Raises:
    - IntegrationDivergedError: the new state is not finite (step index 1).
    """
    c = _Coefficients.build(
        params,
        paul.drive_freq_rad_s,
        integrator.dt_s,
        thermal_on=noise.thermal_on,
        shot_noise_on=noise.shot_noise_on and integrator.cavity_mode == "resolved",
    )
    packed = (*state.position, *state.velocity, state.field)
    x, y, z, vx, vy, vz, a = _advance(
        c,
        packed,
        state.time,
        draws,
        heun=integrator.scheme == "stochastic-heun",
        mode=integrator.cavity_mode,
    )
    new_state = SimState((x, y, z), (vx, vy, vz), a, state.time + integrator.dt_s)
    if not new_state.is_finite():
        raise IntegrationDivergedError(1)
    return new_state


def max_timestep(config: ExperimentConfig, params: DerivedParams) -> float:
    """Return the largest dt accepted for this config."""
    omega_ref = max(params.omega_M, config.paul.drive_freq_rad_s)
    limit = MECHANICAL_STEP_FRACTION * 2.0 * math.pi / omega_ref
    if config.integrator.cavity_mode == "resolved":
        limit = min(limit, CAVITY_STEP_FRACTION * 2.0 / params.kappa)
    return limit


def validate_timestep(config: ExperimentConfig, params: DerivedParams) -> None:
    """Reject step sizes that under-resolve the mechanics (or the cavity in resolved mode).

    Raises:
    - ConfigValidationError: reported at ``integrator.dt_s``.
    """
    limit = max_timestep(config, params)
    if config.integrator.dt_s > limit:
        msg = f"dt={config.integrator.dt_s:.3e} s exceeds the {config.integrator.cavity_mode} limit {limit:.3e} s"
        raise ConfigValidationError("integrator.dt_s", msg)


def initial_state(config: ExperimentConfig, params: DerivedParams, rng: np.random.Generator) -> SimState:
    """Place the particle near the well-N antinode with a thermal phase-space draw.

    The axial position is drawn with variance k_B·T/(mω_M²) about the antinode and
    the three velocities with variance k_B·T/m. The axial velocity also carries the
    drive-induced drift of the equilibrium point so a noise-free run at T = 0 starts
    on the forced orbit.
    """
    x_well = well_site(config.well_index, params).equilibrium_offset
    drift = 0.0
    if params.omega_M > 0:
        amplitude = excursion_amplitude(well_site(config.well_index, params), params.omega_T_sq, params.omega_M)
        drift = -amplitude * config.paul.drive_freq_rad_s
    temperature = config.integrator.initial_temperature_k
    if temperature is None:
        temperature = params.bath_temperature if config.noise.thermal_on else 0.0
    sigma = math.sqrt(BOLTZMANN * temperature / params.mass)
    draws = rng.standard_normal(4)
    spread = sigma / params.omega_M if params.omega_M > 0 else 0.0
    position = (x_well + spread * float(draws[3]), 0.0, 0.0)
    velocity = (drift + sigma * float(draws[0]), sigma * float(draws[1]), sigma * float(draws[2]))
    return SimState(position, velocity, _initial_field(config, params, position))


def _initial_field(config: ExperimentConfig, params: DerivedParams, position: Sequence[float]) -> complex:
    if config.integrator.cavity_mode == "frozen":
        return params.alpha_bar
    return adiabatic_field(position, params)


def simulate(
    config: ExperimentConfig,
    *,
    member: int = 0,
    initial: SimState | None = None,
    block_steps: int = NOISE_BLOCK_STEPS,
) -> Trajectory:
    """Integrate one trajectory of ``config``.

    Parameters:
    - member: Ensemble index selecting the random stream (seed, member).
    - initial: Optional starting state; its field is replaced by the slaved/frozen
      value outside resolved mode.
    - block_steps: Steps of noise drawn per generator call (does not change results).

    Raises:
    - ConfigValidationError: dt violates the step limit.
    - IntegrationDivergedError: the state became non-finite.
    """
    params = derive_from_config(config)
    validate_timestep(config, params)
    integ = config.integrator
    mode = integ.cavity_mode
    heun = integ.scheme == "stochastic-heun"
    c = _Coefficients.build(
        params,
        config.paul.drive_freq_rad_s,
        integ.dt_s,
        thermal_on=config.noise.thermal_on,
        shot_noise_on=config.noise.shot_noise_on and mode == "resolved",
    )
    if config.noise.shot_noise_on and mode != "resolved":
        logger.warning("Shot noise applies to the resolved cavity field only; ignored in {} mode", mode)

    rng = trajectory_stream(config.noise.seed, member)
    start = initial_state(config, params, rng)
    if initial is not None:
        start = initial
        if mode != "resolved":
            field = _initial_field(config, params, initial.position)
            start = SimState(initial.position, initial.velocity, field, initial.time)

    n_steps = round(integ.duration_s / integ.dt_s)
    stride = integ.record_stride
    out = np.empty((n_steps // stride + 1, len(TRAJECTORY_COLUMNS)))
    t0 = start.time
    state = (*start.position, *start.velocity, start.field)
    out[0] = (t0, *state[:6], state[6].real, state[6].imag)

    logger.debug(
        "Simulating member {} for {} steps ({} scheme, {} cavity)",
        member,
        humanize.intcomma(n_steps),
        integ.scheme,
        mode,
    )
    started = time.perf_counter()
    done = 0
    while done < n_steps:
        count = min(block_steps, n_steps - done)
        block = rng.standard_normal((count, NOISE_COLUMNS)).tolist()
        for draws in block:
            state = _advance(c, state, t0 + done * integ.dt_s, draws, heun=heun, mode=mode)
            done += 1
            x, y, z, vx, vy, vz, a = state
            if not math.isfinite(x + y + z + vx + vy + vz + a.real + a.imag):
                raise IntegrationDivergedError(done)
            if done % stride == 0:
                out[done // stride] = (t0 + done * integ.dt_s, x, y, z, vx, vy, vz, a.real, a.imag)

    logger.debug(
        "Member {} finished {} steps in {}",
        member,
        humanize.intcomma(n_steps),
        humanize.precisedelta(time.perf_counter() - started, minimum_unit="milliseconds"),
    )
    return Trajectory(
        data=out,
        sample_interval=integ.dt_s * stride,
        config_hash=config.fingerprint(),
        seed=config.noise.seed,
        member=member,
        omega_M=params.omega_M,
        omega_d=config.paul.drive_freq_rad_s,
    )


def _forced_orbit(traj: Trajectory, params: DerivedParams, well_index: int) -> tuple[np.ndarray, np.ndarray]:
    site = well_site(well_index, params)
    amplitude = excursion_amplitude(site, params.omega_T_sq, params.omega_M) if params.omega_M > 0 else 0.0
    phase = traj.omega_d * traj.t
    return site.equilibrium_offset - amplitude * np.sin(phase), -amplitude * traj.omega_d * np.cos(phase)


def equilibrium_deviation(traj: Trajectory, params: DerivedParams, well_index: int) -> np.ndarray:
    """Return x - x_eq(t), the axial displacement from the moving equilibrium of well N."""
    x_eq, _ = _forced_orbit(traj, params, well_index)
    return traj.x - x_eq


def left_well(traj: Trajectory, params: DerivedParams, well_index: int) -> bool:
    """Return True when the particle ever strays past a node (λ/4) from its moving equilibrium."""
    half_spacing = 0.5 * math.pi / params.wavenumber_k
    return bool(np.any(np.abs(equilibrium_deviation(traj, params, well_index)) > half_spacing))


def axial_energy(traj: Trajectory, params: DerivedParams, well_index: int) -> np.ndarray:
    """Return the axial oscillation energy about the moving equilibrium point.

    E = ½m(v_x - ẋ_eq)² + ½mω_M²(x - x_eq)², with x_eq(t) = Nπ/k - amp·sin(ω_d t).
    """
    x_eq, v_eq = _forced_orbit(traj, params, well_index)
    return 0.5 * params.mass * ((traj.vx - v_eq) ** 2 + params.omega_M**2 * (traj.x - x_eq) ** 2)


def mechanical_energy(traj: Trajectory, params: DerivedParams) -> np.ndarray:
    """Return kinetic plus optical potential energy -ħA|a|²cos²(kx)𝓕(y,z) per sample (Paul trap excluded)."""
    intensity = np.abs(traj.field) ** 2
    envelope = np.exp(-2.0 * (traj.y**2 + traj.z**2) / params.waist_m**2)
    potential = -HBAR * params.coupling_A * intensity * np.cos(params.wavenumber_k * traj.x) ** 2 * envelope
    speed_sq = traj.vx**2 + traj.column("vy") ** 2 + traj.column("vz") ** 2
    return 0.5 * params.mass * speed_sq + potential
