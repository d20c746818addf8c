"""Fixtures shared by the HybridTrap test suite."""

from collections.abc import Callable, Generator
from typing import Any

import numpy as np
import pytest

import src.main
from src.models import ExperimentConfig
from src.services.config_loader import load_config, validate_config
from src.services.params import DerivedParams, derive_from_config
from src.services.spectral import TimeSeries

ConfigFactory = Callable[..., ExperimentConfig]


@pytest.fixture(autouse=True)
def reset_settings_cache() -> Generator[None]:
    """Drop cached process settings so each test sees its own environment."""
    src.main._cached_settings = None  # noqa: SLF001
    yield
    src.main._cached_settings = None  # noqa: SLF001


@pytest.fixture
def default_config() -> ExperimentConfig:
    """Fixture providing the shipped default preset."""
    return load_config("default")


@pytest.fixture
def default_params(default_config: ExperimentConfig) -> DerivedParams:
    """Fixture providing the derived parameters of the default preset."""
    return derive_from_config(default_config)


@pytest.fixture
def fig3_config() -> ExperimentConfig:
    """Fixture providing the high-well cooling preset."""
    return load_config("fig3")


@pytest.fixture
def fig3_10khz_config() -> ExperimentConfig:
    """Fixture providing the N = 450 preset with the well softened to 2π × 10 kHz."""
    return load_config("fig3", ["cavity.target_photon_n=2.436893e8"])


@pytest.fixture
def make_config() -> ConfigFactory:
    """Fixture building a validated config from section mappings.

    ``make_config(integrator={"dt_s": 1e-7}, well_index=3)`` validates exactly like
    a TOML file with those tables would.
    """

    def build(**sections: Any) -> ExperimentConfig:
        return validate_config(dict(sections))

    return build


def sine_series(
    frequency_hz: float,
    sample_rate: float,
    n_samples: int,
    amplitude: float = 1.0,
    decay_rate: float = 0.0,
) -> TimeSeries:
    """Return amplitude·exp(-decay_rate·t)·sin(2πft) sampled at ``sample_rate``."""
    t = np.arange(n_samples) / sample_rate
    samples = amplitude * np.exp(-decay_rate * t) * np.sin(2.0 * np.pi * frequency_hz * t)
    return TimeSeries(samples, sample_rate)
