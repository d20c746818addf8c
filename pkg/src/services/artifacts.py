"""Reading and writing run artifacts.

Every file is written atomically: the payload goes to ``<name>.part`` next to the
final path and is moved into place with ``Path.replace`` (retried on
PermissionError, falling back to a copy). Numbers are written with ``%.17g`` so
float64 values round-trip exactly.
"""

from __future__ import annotations

import hashlib
import io
import shutil
from pathlib import Path
from typing import TYPE_CHECKING, Any

import humanize
import numpy as np
import orjson
from loguru import logger
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_incrementing

from src.models import FileRecord, RunManifest
from src.services.config_loader import strip_bom
from src.services.dynamics import TRAJECTORY_COLUMNS, Trajectory
from src.services.errors import SpectrumSchemaError
from src.services.spectral import PowerSpectrum

if TYPE_CHECKING:
    from src.services.spectral import Spectrogram

FLOAT_FORMAT = "%.17g"
BINARY_DTYPE = "<f8"
SPECTRUM_HEADER = "freq_hz,psd"
SPECTROGRAM_HEADER = "window_start_s,freq_hz,psd"
MANIFEST_NAME = "manifest.json"
JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY
REPLACE_ATTEMPTS = 3
HASH_CHUNK_BYTES = 1 << 20


@retry(
    retry=retry_if_exception_type(PermissionError),
    stop=stop_after_attempt(REPLACE_ATTEMPTS),
    wait=wait_incrementing(start=0.1, increment=0.1),
    reraise=True,
)
def _replace(tmp: Path, path: Path) -> None:
    tmp.replace(path)


def atomic_write_bytes(path: Path, payload: bytes) -> Path:
    """Write ``payload`` to ``path`` atomically and return the path.

    Parameters:
    - path: Final destination; parent directories are created.
    - payload: Bytes to write.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.name}.part")
    try:
        tmp.write_bytes(payload)
        try:
            _replace(tmp, path)
        except PermissionError:
            logger.debug("Atomic replace failed after {} attempts, falling back to direct write", REPLACE_ATTEMPTS)
            shutil.copy2(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)
    logger.debug("Wrote {} ({})", path, humanize.naturalsize(len(payload)))
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    """Write UTF-8 text atomically."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(payload: Any) -> bytes:
    """Serialize to indented JSON (numpy arrays and non-str keys allowed)."""
    return orjson.dumps(payload, option=JSON_OPTIONS)


def write_json(path: Path, payload: Any) -> Path:
    """Write a JSON document atomically."""
    return atomic_write_bytes(path, dumps_json(payload) + b"\n")


def _csv_bytes(header: str, rows: np.ndarray) -> bytes:
    buffer = io.StringIO()
    np.savetxt(buffer, rows, delimiter=",", header=header, comments="", fmt=FLOAT_FORMAT)
    return buffer.getvalue().encode("ascii")


# --- Trajectories ---
def write_trajectory_csv(path: Path, traj: Trajectory) -> Path:
    """Write ``t,x,y,z,vx,vy,vz,re_a,im_a`` rows."""
    return atomic_write_bytes(path, _csv_bytes(",".join(TRAJECTORY_COLUMNS), traj.data))


def _sidecar(traj: Trajectory) -> dict[str, Any]:
    return {
        "columns": list(TRAJECTORY_COLUMNS),
        "dtype": BINARY_DTYPE,
        "rows": len(traj),
        "sample_interval": traj.sample_interval,
        "config_hash": traj.config_hash,
        "seed": traj.seed,
        "member": traj.member,
        "omega_M": traj.omega_M,
        "omega_d": traj.omega_d,
    }


def write_trajectory_binary(path: Path, traj: Trajectory) -> list[Path]:
    """Write little-endian float64 records plus a ``.json`` sidecar describing the layout."""
    data_path = atomic_write_bytes(path, np.ascontiguousarray(traj.data, dtype=BINARY_DTYPE).tobytes())
    return [data_path, write_json(path.with_suffix(".json"), _sidecar(traj))]


def write_trajectory(directory: Path, traj: Trajectory, fmt: str, stem: str = "trajectory") -> list[Path]:
    """Write a trajectory in the configured format and return the emitted paths."""
    if fmt == "binary":
        return write_trajectory_binary(directory / f"{stem}.bin", traj)
    return [write_trajectory_csv(directory / f"{stem}.csv", traj)]


def read_trajectory_binary(path: Path) -> Trajectory:
    """Read a binary trajectory and its sidecar."""
    meta = orjson.loads(path.with_suffix(".json").read_bytes())
    data = np.frombuffer(path.read_bytes(), dtype=meta["dtype"]).reshape(meta["rows"], len(meta["columns"]))
    return Trajectory(
        data=data.astype(float),
        sample_interval=meta["sample_interval"],
        config_hash=meta["config_hash"],
        seed=meta["seed"],
        member=meta["member"],
        omega_M=meta["omega_M"],
        omega_d=meta["omega_d"],
    )


def read_trajectory_csv(
    path: Path,
    *,
    omega_M: float,
    omega_d: float,
    config_hash: str = "",
    seed: int = 0,
    member: int = 0,
) -> Trajectory:
    """Read a trajectory CSV. Frequencies and provenance are not stored in the CSV and must be supplied."""
    text = strip_bom(path.read_text(encoding="utf-8"))
    header, _, body = text.partition("\n")
    if header.strip() != ",".join(TRAJECTORY_COLUMNS):
        msg = f"{path}: unexpected trajectory header {header.strip()!r}"
        raise SpectrumSchemaError(msg)
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    interval = (data[-1, 0] - data[0, 0]) / (len(data) - 1)
    return Trajectory(data, interval, config_hash, seed, member, omega_M, omega_d)


# --- Spectra ---
def write_spectrum_csv(path: Path, spec: PowerSpectrum) -> Path:
    """Write ``freq_hz,psd`` rows."""
    return atomic_write_bytes(path, _csv_bytes(SPECTRUM_HEADER, np.column_stack((spec.frequencies, spec.psd))))


def read_spectrum_csv(path: Path) -> PowerSpectrum:
    """Read a ``freq_hz,psd`` CSV back into a PowerSpectrum.

    Raises:
    - SpectrumSchemaError: wrong header, unparsable rows, fewer than two rows,
      non-increasing frequencies or negative PSD values.
    """
    text = strip_bom(path.read_text(encoding="utf-8"))
    header, _, body = text.partition("\n")
    if header.strip().replace(" ", "") != SPECTRUM_HEADER:
        msg = f"{path}: expected header {SPECTRUM_HEADER!r}, got {header.strip()!r}"
        raise SpectrumSchemaError(msg)
    try:
        rows = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    except ValueError as err:
        msg = f"{path}: unparsable spectrum rows ({err})"
        raise SpectrumSchemaError(msg) from err
    if rows.shape[0] < 2 or rows.shape[1] != 2:  # noqa: PLR2004
        msg = f"{path}: need at least two rows of two columns, got shape {rows.shape}"
        raise SpectrumSchemaError(msg)
    freqs, psd = rows[:, 0], rows[:, 1]
    if not np.all(np.isfinite(rows)) or np.any(np.diff(freqs) <= 0) or np.any(psd < 0):
        msg = f"{path}: frequencies must increase strictly and psd must be finite and non-negative"
        raise SpectrumSchemaError(msg)
    resolution = float(np.median(np.diff(freqs)))
    return PowerSpectrum(freqs, psd, resolution, "unknown", 0)


def write_spectrogram_csv(path: Path, gram: Spectrogram) -> Path:
    """Write the long-format ``window_start_s,freq_hz,psd`` table."""
    starts = np.repeat(gram.start_times, gram.frequencies.size)
    freqs = np.tile(gram.frequencies, len(gram))
    rows = np.column_stack((starts, freqs, gram.power.ravel()))
    return atomic_write_bytes(path, _csv_bytes(SPECTROGRAM_HEADER, rows))


# --- Gnuplot ---
def _gnuplot_script(dat_name: str, kind: str) -> str:
    if kind == "spectrogram":
        return (
            "set xlabel 'Time (s)'\n"
            "set ylabel 'Frequency (Hz)'\n"
            "set cblabel 'PSD'\n"
            "set logscale cb\n"
            "set view map\n"
            f"splot '{dat_name}' using 1:2:3 with pm3d notitle\n"
        )
    return (
        "set xlabel 'Frequency (Hz)'\n"
        "set ylabel 'PSD'\n"
        "set logscale y\n"
        f"plot '{dat_name}' using 1:2 with lines title 'PSD'\n"
    )


def write_gnuplot_spectrum(stem: Path, spec: PowerSpectrum) -> list[Path]:
    """Write ``<stem>.dat`` and a ``<stem>.gp`` script plotting it."""
    buffer = io.StringIO()
    np.savetxt(buffer, np.column_stack((spec.frequencies, spec.psd)), fmt=FLOAT_FORMAT)
    dat = atomic_write_text(stem.with_suffix(".dat"), buffer.getvalue())
    return [dat, atomic_write_text(stem.with_suffix(".gp"), _gnuplot_script(dat.name, "spectrum"))]


def write_gnuplot_spectrogram(stem: Path, gram: Spectrogram) -> list[Path]:
    """Write a blank-line separated ``.dat`` grid and a ``.gp`` pm3d map script."""
    buffer = io.StringIO()
    for start, row in zip(gram.start_times, gram.power, strict=True):
        block = np.column_stack((np.full(gram.frequencies.size, start), gram.frequencies, row))
        np.savetxt(buffer, block, fmt=FLOAT_FORMAT)
        buffer.write("\n")
    dat = atomic_write_text(stem.with_suffix(".dat"), buffer.getvalue())
    return [dat, atomic_write_text(stem.with_suffix(".gp"), _gnuplot_script(dat.name, "spectrogram"))]


# --- Manifest ---
def sha256_file(path: Path) -> str:
    """Return the hex sha256 of a file."""
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        while chunk := handle.read(HASH_CHUNK_BYTES):
            digest.update(chunk)
    return digest.hexdigest()


def file_record(path: Path, root: Path) -> FileRecord:
    """Describe an emitted file relative to the run directory."""
    return FileRecord(
        path=path.relative_to(root).as_posix(),
        sha256=sha256_file(path),
        size_bytes=path.stat().st_size,
    )


def write_manifest(directory: Path, manifest: RunManifest) -> Path:
    """Write ``manifest.json``; call only after every other artifact exists."""
    payload = manifest.model_dump(mode="json")
    path = write_json(directory / MANIFEST_NAME, payload)
    logger.info(
        "Manifest {} lists {} file(s), {}",
        path,
        len(manifest.files),
        humanize.naturalsize(sum(f.size_bytes for f in manifest.files)),
    )
    return path
