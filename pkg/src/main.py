"""HybridTrap command-line application.

Simulates and analyses a charged nanosphere held in a Paul trap and the
standing wave of a driven optical cavity.

Subcommands:
- derive: derived physical parameters as JSON.
- linearize: couplings, frequencies and cooling rate about a well.
- simulate: stochastic trajectories (CSV or binary).
- spectrum / spectrogram: heterodyne PSDs, peaks and decay fits.
- infer: photon number and charge from measured frequencies.
- sweep: pressure or well-index ladders with a summary table.

JSON results go to stdout, logs to stderr. Exit codes: 0 success, 1 unexpected
error, 2 missing file or usage error, 3 validation failure, 4 integration
divergence, 5 analysis failure.
"""

from __future__ import annotations

import math
import sys
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, CliApp, CliImplicitFlag, CliSubCommand, SettingsConfigDict, SettingsError

from src.models import Settings
from src.services import runner
from src.services.artifacts import dumps_json
from src.services.errors import (
    AnalysisError,
    ConfigNotFoundError,
    ConfigValidationError,
    IntegrationDivergedError,
    InvalidInputError,
    SpectrumSchemaError,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_DIVERGED = 4
EXIT_ANALYSIS = 5

LOG_FORMAT = "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{message}</cyan>"

_cached_settings: Settings | None = None


def get_settings() -> Settings:
    """Get the process settings, read once from ``HYBRIDTRAP_*`` variables and ``.env``.

    Returns:
    - The settings object.
    """
    global _cached_settings  # noqa: PLW0603
    if _cached_settings is None:
        _cached_settings = Settings()  # pyright: ignore[reportCallIssue]
    return _cached_settings


def configure_logging(level: str) -> None:
    """Send loguru output to stderr at ``level``; stdout carries results only."""
    logger.remove()
    logger.add(sys.stderr, level=level, format=LOG_FORMAT, colorize=True)


def _emit(result: dict[str, Any]) -> None:
    sys.stdout.write(dumps_json(result).decode("utf-8") + "\n")
    sys.stdout.flush()


class _RunOptions(BaseModel):
    """Options shared by every subcommand."""

    config: str | None = Field(None, description="Config file path or preset name (default, fig2, fig3, fig4a).")
    manifest: Path | None = Field(None, description="Reuse the config and seed recorded in a prior run manifest.")
    overrides: list[str] = Field(default_factory=list, alias="set", description="dotted.key=value override.")
    seed: int | None = Field(None, ge=0, lt=2**64, description="Master seed (replaces noise.seed).")
    out: Path | None = Field(None, description="Run directory.")
    gnuplot: CliImplicitFlag[bool] = Field(False, description="Also write gnuplot data/script pairs.")

    def context(self, subcommand: str) -> runner.RunContext:
        """Load the config and resolve the run directory."""
        return runner.build_context(
            subcommand,
            get_settings(),
            config_ref=self.config,
            manifest=self.manifest,
            overrides=self.overrides,
            seed=self.seed,
            out=self.out,
            gnuplot=self.gnuplot,
        )


class DeriveCommand(_RunOptions):
    """Print every derived physical parameter."""

    def cli_cmd(self) -> None:
        _emit(runner.run_derive(self.context("derive")))


class LinearizeCommand(_RunOptions):
    """Linearize the optical well about the instantaneous equilibrium."""

    well: int | None = Field(None, ge=0, description="Well index (defaults to the config's well_index).")
    drive_phase: float = Field(math.pi / 2, description="Paul drive phase ω_d·t in radians.")

    def cli_cmd(self) -> None:
        _emit(runner.run_linearize(self.context("linearize"), self.well, self.drive_phase))


class SimulateCommand(_RunOptions):
    """Integrate one trajectory or an ensemble."""

    ensemble: int | None = Field(None, ge=1, description="Number of trajectories (defaults to ensemble_size).")

    def cli_cmd(self) -> None:
        _emit(runner.run_simulate(self.context("simulate"), self.ensemble))


class SpectrumCommand(_RunOptions):
    """Write the Welch PSD and the classified peaks."""

    def cli_cmd(self) -> None:
        _emit(runner.run_spectrum(self.context("spectrum")))


class SpectrogramCommand(_RunOptions):
    """Write windowed PSDs and decay-rate fits."""

    def cli_cmd(self) -> None:
        _emit(runner.run_spectrogram(self.context("spectrogram")))


class InferCommand(_RunOptions):
    """Recover photon number and charge."""

    observation: Path | None = Field(None, description="JSON FrequencyObservation record.")
    spectrum: Path | None = Field(None, description="Spectrum CSV (freq_hz,psd) to read ω_M and ω_s from.")

    def cli_cmd(self) -> None:
        _emit(runner.run_infer(self.context("infer"), self.observation, self.spectrum))


class SweepCommand(_RunOptions):
    """Run a pressure or well ladder."""

    pressure: str | None = Field(None, description="START:STOP:decade or START:STOP:COUNT in mbar.")
    wells: str | None = Field(None, description="START:STOP:STEP well indices.")

    def cli_cmd(self) -> None:
        _emit(runner.run_sweep_command(self.context("sweep"), self.pressure, self.wells))


class HybridTrapCli(BaseSettings):
    """Hybrid Paul-trap / optical-cavity simulator and analysis toolkit."""

    model_config = SettingsConfigDict(
        cli_prog_name="hybridtrap",
        cli_kebab_case=True,
        cli_exit_on_error=False,
        env_prefix="HYBRIDTRAP_CLI_",
    )

    derive: CliSubCommand[DeriveCommand]
    linearize: CliSubCommand[LinearizeCommand]
    simulate: CliSubCommand[SimulateCommand]
    spectrum: CliSubCommand[SpectrumCommand]
    spectrogram: CliSubCommand[SpectrogramCommand]
    infer: CliSubCommand[InferCommand]
    sweep: CliSubCommand[SweepCommand]

    def cli_cmd(self) -> None:
        CliApp.run_subcommand(self)


def main(argv: list[str] | None = None) -> int:
    """Run the command line and return the process exit code.

    Parameters:
    - argv: Arguments without the program name (defaults to ``sys.argv[1:]``).
    """
    settings = get_settings()
    configure_logging(settings.log_level)
    args = sys.argv[1:] if argv is None else argv
    try:
        CliApp.run(HybridTrapCli, cli_args=args)
    except (SettingsError, ValidationError) as err:
        logger.error("Usage error: {}", err)
        return EXIT_USAGE
    except FileNotFoundError as err:
        logger.error("{}", err)
        return EXIT_USAGE
    except ConfigValidationError as err:
        logger.error("Invalid configuration at {}: {}", err.field_path, err.message)
        return EXIT_VALIDATION
    except (SpectrumSchemaError, InvalidInputError) as err:
        logger.error("Invalid input: {}", err)
        return EXIT_VALIDATION
    except IntegrationDivergedError as err:
        logger.error("{}", err)
        return EXIT_DIVERGED
    except AnalysisError as err:
        logger.error("Analysis failed: {}", err)
        return EXIT_ANALYSIS
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except Exception as err:  # noqa: BLE001
        logger.exception("Unexpected error: {}", err)
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
