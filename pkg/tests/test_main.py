"""Tests for the hybridtrap command line, driven through ``main``."""

from pathlib import Path
from typing import Any

import orjson
import pytest

from src.main import EXIT_ANALYSIS, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from src.models import ExperimentConfig, FrequencyObservation, RunManifest
from src.services.inference import forward_frequencies
from src.services.params import DerivedParams

SHORT_RUN = ["--set", "integrator.duration_s=1e-3"]
N_40KHZ = 3.899029e9
FIG3_SWING = 0.20459


def _stdout_json(capsys: pytest.CaptureFixture[str]) -> dict[str, Any]:
    return orjson.loads(capsys.readouterr().out)


def _manifest(run_dir: Path) -> RunManifest:
    return RunManifest.model_validate(orjson.loads((run_dir / "manifest.json").read_bytes()))


def test_derive_prints_parameters_and_writes_manifest(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Verify derive emits the mass on stdout and a manifest listing the result file."""
    code = main(["derive", "--config", "default", "--out", str(tmp_path)])
    assert code == EXIT_OK
    result = _stdout_json(capsys)
    assert result["derived"]["mass"] == pytest.approx(8.412986e-17, rel=1e-6)
    assert "alpha_bar_re" in result["derived"]

    manifest = _manifest(tmp_path)
    assert manifest.subcommand == "derive"
    assert [f.path for f in manifest.files] == ["derive.json"]
    assert manifest.config_hash == result["config_hash"]
    assert ExperimentConfig.model_validate(manifest.config).fingerprint() == manifest.config_hash


def test_missing_config_is_a_usage_error(tmp_path: Path) -> None:
    """Verify a missing config exits 2 before any run directory is created."""
    out = tmp_path / "run"
    assert main(["derive", "--config", str(tmp_path / "missing.toml"), "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()


def test_missing_subcommand_is_a_usage_error() -> None:  # noqa: D103
    assert main([]) == EXIT_USAGE


def test_unknown_override_is_a_validation_error(tmp_path: Path) -> None:  # noqa: D103
    args = ["derive", "--config", "default", "--set", "integrator.bogus=1", "--out", str(tmp_path)]
    assert main(args) == EXIT_VALIDATION


def test_oversized_step_is_rejected_before_integration(tmp_path: Path) -> None:  # noqa: D103
    out = tmp_path / "run"
    args = ["simulate", "--config", "default", "--set", "integrator.dt_s=1e-6", "--out", str(out)]
    assert main(args) == EXIT_VALIDATION
    assert not (out / "manifest.json").exists()


def test_same_seed_reproduces_the_trajectory(tmp_path: Path) -> None:
    """Verify two runs with one seed write byte-identical trajectories."""
    hashes = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--config", "default", *SHORT_RUN, "--seed", "7", "--out", str(out)]) == EXIT_OK
        records = {f.path: f.sha256 for f in _manifest(out).files}
        assert set(records) == {"trajectory.csv", "simulate.json"}
        hashes.append(records["trajectory.csv"])
    assert hashes[0] == hashes[1]
    assert _manifest(tmp_path / "a").seed == 7


def test_spectrum_reuses_a_recorded_run(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Verify spectrum --manifest analyses the recorded trajectory under the recorded config."""
    first, second = tmp_path / "sim", tmp_path / "spec"
    assert main(["simulate", "--config", "default", *SHORT_RUN, "--out", str(first)]) == EXIT_OK
    capsys.readouterr()

    code = main(["spectrum", "--manifest", str(first / "manifest.json"), "--gnuplot", "--out", str(second)])
    assert code == EXIT_OK
    result = _stdout_json(capsys)
    assert result["config_hash"] == _manifest(first).config_hash
    written = {f.path for f in _manifest(second).files}
    assert {"spectrum.csv", "peaks.json", "spectrum.dat", "spectrum.gp", "spectrum.json"} <= written


def _write_observation(path: Path, obs: FrequencyObservation) -> Path:
    path.write_bytes(orjson.dumps(obs.model_dump()))
    return path


def test_infer_recovers_charge(
    tmp_path: Path,
    capsys: pytest.CaptureFixture[str],
    default_config: ExperimentConfig,
    default_params: DerivedParams,
) -> None:
    """Verify infer reads an observation record and reports n and the integer charge."""
    obs = forward_frequencies(N_40KHZ, 2, default_params, default_config.paul)
    path = _write_observation(tmp_path / "obs.json", obs)
    code = main(["infer", "--config", "default", "--observation", str(path), "--out", str(tmp_path / "run")])
    assert code == EXIT_OK
    result = _stdout_json(capsys)["result"]
    assert result["photon_n"] == pytest.approx(N_40KHZ, rel=1e-9)
    assert result["charge_count"] == 2


def test_infer_inconsistent_observation_is_an_analysis_error(tmp_path: Path) -> None:
    """Verify a secular frequency far below the optical-only value exits 5."""
    obs = FrequencyObservation(omega_M=2.5e5, omega_s=1.0, omega_M_uncertainty=1.0, omega_s_uncertainty=0.01)
    path = _write_observation(tmp_path / "obs.json", obs)
    assert main(["infer", "--config", "default", "--observation", str(path), "--out", str(tmp_path)]) == EXIT_ANALYSIS


def test_infer_needs_an_input(tmp_path: Path) -> None:  # noqa: D103
    assert main(["infer", "--config", "default", "--out", str(tmp_path)]) == EXIT_USAGE


def test_linearize_high_well(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Verify linearize --well reports the drive excursion phase swing of that well."""
    assert main(["linearize", "--config", "fig3", "--well", "450", "--out", str(tmp_path)]) == EXIT_OK
    result = _stdout_json(capsys)
    assert result["well_index"] == 450
    assert result["phase_excursion"] == pytest.approx(FIG3_SWING, rel=1e-3)
    assert result["gamma_opt_cycle_average"] > 0


@pytest.mark.slow
def test_pressure_sweep_writes_per_point_outputs(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Verify a two-decade pressure ladder writes one spectrum per point and the summary tables."""
    args = [
        "sweep",
        "--config",
        "fig4a",
        "--pressure",
        "1e-2:1e-3:decade",
        "--set",
        "integrator.duration_s=3e-3",
        "--set",
        "sweep.settle_s=1e-3",
        "--out",
        str(tmp_path),
    ]
    assert main(args) == EXIT_OK
    result = _stdout_json(capsys)
    assert [p["label"] for p in result["points"]] == ["00_p_1.000e-02mbar", "01_p_1.000e-03mbar"]
    written = {f.path for f in _manifest(tmp_path).files}
    assert {"00_p_1.000e-02mbar/spectrum.csv", "01_p_1.000e-03mbar/peaks.json", "summary.csv"} <= written
