"""Experiment Config Loading.

Config files are TOML with a ``[model]`` and a ``[train]`` section. Command-line
overrides use ``section.key=value`` with TOML value syntax, e.g.
``train.learning_rate=1e-3`` or ``model.visual_channels=["aus"]``.
Unknown sections or keys are errors.
"""

import tomllib
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from mimicry_cli.models.config import ExperimentConfig, RunConfig
from mimicry_cli.run_logger import get_logger

logger = get_logger(__name__)

SECTIONS = ("model", "train")


class ConfigError(ValueError):
    """Raised for unreadable, unknown or invalid configuration."""


def parse_override(override: str) -> tuple[str, str, Any]:
    """Split ``section.key=value`` and parse the value as TOML.

    Bare words that are not valid TOML are taken as strings.
    """
    target, sep, raw = override.partition("=")
    section, dot, key = target.strip().partition(".")
    if not sep or not dot or not key:
        raise ConfigError(f"Override must look like section.key=value, got {override!r}")
    if section not in SECTIONS:
        raise ConfigError(f"Unknown config section {section!r} in override {override!r}")
    try:
        value = tomllib.loads(f"value = {raw.strip()}")["value"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return section, key, value


def load_experiment_config(
    path: str | Path | None = None,
    overrides: Sequence[str] = (),
    seed: int | None = None,
) -> ExperimentConfig:
    """Build the experiment config from a file, overrides and a seed.

    Args:
        path: TOML file (defaults apply when omitted)
        overrides: ``section.key=value`` strings, applied in order
        seed: If given, replaces both ``model.seed`` and ``train.seed``

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: Missing file, TOML syntax error, unknown key, bad value
    """
    data: dict[str, dict[str, Any]] = {}
    if path is not None:
        path = Path(path)
        try:
            with path.open("rb") as handle:
                raw = tomllib.load(handle)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"{path}: unknown section(s) {', '.join(sorted(unknown))}")
        for section, values in raw.items():
            if not isinstance(values, dict):
                raise ConfigError(f"{path}: [{section}] must be a table")
            data[section] = dict(values)

    for override in overrides:
        section, key, value = parse_override(override)
        data.setdefault(section, {})[key] = value

    if seed is not None:
        data.setdefault("model", {})["seed"] = seed
        data.setdefault("train", {})["seed"] = seed

    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e

    logger.info(
        "Configuration loaded",
        path=str(path) if path is not None else None,
        overrides=list(overrides),
        d_model=config.model.d_model,
        batch_size=config.train.batch_size,
        learning_rate=config.train.learning_rate,
    )
    return config


def load_run_config(run: RunConfig) -> ExperimentConfig:
    """Experiment config named by one invocation: its file, overrides and seed."""
    return load_experiment_config(run.config_path, run.overrides, run.seed)
