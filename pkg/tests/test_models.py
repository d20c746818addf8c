import pytest  # noqa: D100
from pydantic import ValidationError

from src.models import (
    DEFAULT_PHOTON_N,
    CavitySpec,
    ExperimentConfig,
    FrequencyObservation,
    IntegratorConfig,
    NoiseConfig,
    Settings,
    SphereSpec,
    SweepSpec,
)


def test_experiment_config_defaults():  # noqa: D103
    config = ExperimentConfig()
    assert config.cavity.target_photon_n == DEFAULT_PHOTON_N
    assert config.integrator.scheme == "stochastic-heun"
    assert config.integrator.cavity_mode == "resolved"
    assert config.noise.rng_algorithm == "philox"
    assert config.sweep is None
    assert config.ensemble_size == 1


def test_specs_are_frozen_and_strict():  # noqa: D103
    sphere = SphereSpec()
    with pytest.raises(ValidationError):
        sphere.radius_m = 1e-6  # type: ignore[misc]
    with pytest.raises(ValidationError):
        SphereSpec(colour="red")  # type: ignore[call-arg]


def test_physical_bounds():  # noqa: D103
    with pytest.raises(ValidationError):
        SphereSpec(radius_m=0.0)
    with pytest.raises(ValidationError):
        SphereSpec(rel_permittivity=1.0)
    with pytest.raises(ValidationError):
        SphereSpec(charge_count=-1)
    with pytest.raises(ValidationError):
        CavitySpec(target_photon_n=-1.0)
    with pytest.raises(ValidationError):
        CavitySpec(target_photon_n=1.0, detuning_rad_s=float("nan"))


def test_integrator_and_noise_bounds():  # noqa: D103
    with pytest.raises(ValidationError):
        IntegratorConfig(dt_s=0.0)
    with pytest.raises(ValidationError):
        IntegratorConfig(scheme="rk4")  # type: ignore[arg-type]
    with pytest.raises(ValidationError):
        IntegratorConfig(cavity_mode="quantum")  # type: ignore[arg-type]
    with pytest.raises(ValidationError):
        NoiseConfig(seed=2**64)
    assert NoiseConfig(seed=2**64 - 1).seed == 2**64 - 1


def test_sweep_lists_are_checked():  # noqa: D103
    with pytest.raises(ValidationError):
        SweepSpec(pressures_mbar=(1e-3, float("inf")))
    with pytest.raises(ValidationError):
        SweepSpec(kind="wells", wells=(0, -1))
    assert SweepSpec(kind="wells", wells=(0, 10)).wells == (0, 10)


def test_frequency_observation_bounds():  # noqa: D103
    with pytest.raises(ValidationError):
        FrequencyObservation(omega_M=1.0, omega_s=0.0)
    with pytest.raises(ValidationError):
        FrequencyObservation(omega_M=-1.0, omega_s=1.0)
    obs = FrequencyObservation(omega_M=1.0, omega_s=2.0)
    assert obs.omega_M_uncertainty == 0.0


def test_settings_from_environment(monkeypatch: pytest.MonkeyPatch):  # noqa: D103
    monkeypatch.setenv("HYBRIDTRAP_WORKERS", "3")
    monkeypatch.setenv("HYBRIDTRAP_LOG_LEVEL", "debug")
    monkeypatch.setenv("HYBRIDTRAP_OUTPUT_DIR", "out")
    settings = Settings()  # pyright: ignore[reportCallIssue]
    assert settings.workers == 3
    assert settings.log_level == "DEBUG"
    assert settings.output_dir == "out"


def test_settings_reject_zero_workers(monkeypatch: pytest.MonkeyPatch):  # noqa: D103
    monkeypatch.setenv("HYBRIDTRAP_WORKERS", "0")
    with pytest.raises(ValidationError):
        Settings()  # pyright: ignore[reportCallIssue]
