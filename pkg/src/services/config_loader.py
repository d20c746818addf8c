"""Loading, overriding and validating experiment configs.

Configs are TOML files with SI units and unit-suffixed keys. A config reference
is either a path or the name of a shipped preset (``default``, ``fig2``, ``fig3``,
``fig4a``). Dotted ``key=value`` overrides are applied to the raw mapping before
validation, so an override naming a missing field is rejected like any other
unknown key.
"""

from __future__ import annotations

import copy
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any

import orjson
from loguru import logger
from pydantic import ValidationError

from src.models import ExperimentConfig, RunManifest
from src.services.errors import ConfigNotFoundError, ConfigValidationError

PRESET_DIR = Path(__file__).resolve().parent.parent / "static" / "presets"
FIGURE_PRESETS = ("fig2", "fig3", "fig4a")


def strip_bom(text: str) -> str:
    """Strip a UTF-8 BOM (decoded or mis-decoded) from file text."""
    if text.startswith("\ufeff"):
        text = text[1:]
    elif text.startswith("ï»¿"):
        text = text[3:]
    return text


def preset_names() -> list[str]:
    """Return the names of the shipped presets."""
    return sorted(p.stem for p in PRESET_DIR.glob("*.toml"))


def resolve_config_path(ref: str | Path) -> Path:
    """Return the file a config reference points to.

    Raises:
    - ConfigNotFoundError: neither an existing file nor a preset name.
    """
    path = Path(ref)
    if path.is_file():
        return path
    preset = PRESET_DIR / f"{ref}.toml"
    if isinstance(ref, str) and preset.is_file():
        return preset
    msg = f"config not found: {ref} (presets: {', '.join(preset_names())})"
    raise ConfigNotFoundError(msg)


def read_config_mapping(path: Path) -> dict[str, Any]:
    """Parse a TOML config file into a plain mapping."""
    try:
        text = strip_bom(path.read_text(encoding="utf-8"))
    except FileNotFoundError as err:
        msg = f"config not found: {path}"
        raise ConfigNotFoundError(msg) from err
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigValidationError(str(path), f"invalid TOML: {err}") from err


def parse_override_value(raw: str) -> Any:
    """Parse an override value as a TOML scalar or array, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(mapping: dict[str, Any], overrides: list[str] | tuple[str, ...]) -> dict[str, Any]:
    """Return a copy of ``mapping`` with each ``dotted.key=value`` applied.

    Raises:
    - ConfigValidationError: malformed override or a key that descends into a scalar.
    """
    result = copy.deepcopy(mapping)
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigValidationError(item, "override must have the form dotted.key=value")
        parts = key.split(".")
        node = result
        for depth, part in enumerate(parts[:-1]):
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigValidationError(".".join(parts[: depth + 1]), "is a value, not a section")
            node = child
        node[parts[-1]] = parse_override_value(raw.strip())
        logger.debug("Override {} = {!r}", key, node[parts[-1]])
    return result


def validate_config(mapping: dict[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping.

    Raises:
    - ConfigValidationError: with the dotted path of the first failing field.
    """
    try:
        return ExperimentConfig.model_validate(mapping)
    except ValidationError as err:
        first = err.errors()[0]
        path = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigValidationError(path, first["msg"]) from err


def load_config(
    ref: str | Path,
    overrides: list[str] | tuple[str, ...] = (),
    seed: int | None = None,
) -> ExperimentConfig:
    """Load, override and validate a config.

    Parameters:
    - ref: File path or preset name.
    - overrides: ``dotted.key=value`` strings.
    - seed: Replaces ``noise.seed`` when given.
    """
    path = resolve_config_path(ref)
    mapping = apply_overrides(read_config_mapping(path), overrides)
    if seed is not None:
        mapping.setdefault("noise", {})["seed"] = seed
    config = validate_config(mapping)
    logger.info("Loaded config {} ({})", path.name, config.fingerprint()[:12])
    return config


def load_manifest(path: Path) -> RunManifest:
    """Read a RunManifest JSON file."""
    try:
        payload = orjson.loads(path.read_bytes())
    except FileNotFoundError as err:
        msg = f"manifest not found: {path}"
        raise ConfigNotFoundError(msg) from err
    except orjson.JSONDecodeError as err:
        raise ConfigValidationError(str(path), f"invalid manifest JSON: {err}") from err
    try:
        return RunManifest.model_validate(payload)
    except ValidationError as err:
        first = err.errors()[0]
        raise ConfigValidationError(".".join(str(p) for p in first["loc"]), first["msg"]) from err


def config_from_manifest(
    path: Path,
    overrides: list[str] | tuple[str, ...] = (),
    seed: int | None = None,
) -> tuple[ExperimentConfig, RunManifest]:
    """Rebuild the config recorded in a manifest (optionally overridden) and return both."""
    manifest = load_manifest(path)
    mapping = apply_overrides(manifest.config, overrides)
    if seed is not None:
        mapping.setdefault("noise", {})["seed"] = seed
    config = validate_config(mapping)
    if not overrides and seed is None and config.fingerprint() != manifest.config_hash:
        logger.warning("Manifest {} config hash does not match its snapshot", path)
    return config, manifest


def provide_figure_presets() -> dict[str, ExperimentConfig]:
    """Return the validated figure presets keyed by name."""
    return {name: validate_config(read_config_mapping(PRESET_DIR / f"{name}.toml")) for name in FIGURE_PRESETS}
