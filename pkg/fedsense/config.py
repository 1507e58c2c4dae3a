"""
Configuration settings for the federated sensing simulator.

Process-level settings come from the environment (FEDSENSE_ prefix); experiment
descriptions come from JSON files validated against SimConfig.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from fedsense.errors import ConfigError
from fedsense.sim_models import SimConfig

DEFAULT_OUTPUT_DIR = "results"
EFFECTIVE_CONFIG_NAME = "effective_config.json"

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """
    Settings model for the simulator process.

    Automatically reads from environment variables with FEDSENSE_ prefix.
    """

    output_dir: str = DEFAULT_OUTPUT_DIR
    log_level: str = "INFO"
    workers: int = 1
    log_every: int = 50
    config_path: Optional[str] = None

    model_config = SettingsConfigDict(
        env_prefix="FEDSENSE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        case_sensitive=False,
    )


def get_settings(config_file: Optional[str] = None) -> Settings:
    """
    Get settings instance, optionally loaded from a config file.

    Args:
        config_file: Path to a JSON file with settings values (optional)

    Returns:
        Settings instance
    """
    if config_file and os.path.exists(config_file):
        with open(config_file, "r") as f:
            return Settings.model_validate(json.load(f))
    return Settings()


def load_sim_config(path: Optional[str]) -> SimConfig:
    """
    Load and validate an experiment description.

    Args:
        path: JSON file holding a (possibly partial) SimConfig; None gives the defaults

    Returns:
        Validated SimConfig

    Raises:
        ConfigError: if the file is missing, not JSON, or fails validation
    """
    if path is None:
        return SimConfig()

    if not os.path.exists(path):
        raise ConfigError(f"Config file not found at {path}")

    try:
        with open(path, "r") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Could not read config file {path}: {e}") from e

    try:
        config = SimConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid config in {path}:\n{e}") from e

    logger.info(f"Loaded experiment config from {path}")
    return config


def apply_overrides(config: SimConfig, overrides: Dict[str, Any]) -> SimConfig:
    """
    Return a re-validated copy of config with dotted-path overrides applied.

    Args:
        config: Base configuration
        overrides: Mapping like {"link.packet_loss_prob": 0.2, "seed": 3}; None values are skipped

    Returns:
        New SimConfig

    Raises:
        ConfigError: if a path does not exist or a value is invalid
    """
    data = config.model_dump(mode="json")
    for dotted, value in overrides.items():
        if value is None:
            continue
        *parents, leaf = dotted.split(".")
        node = data
        for key in parents:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"Unknown config section '{key}' in override '{dotted}'")
            node = node[key]
        if leaf not in node:
            raise ConfigError(f"Unknown config field '{dotted}'")
        node[leaf] = value.value if hasattr(value, "value") else value

    try:
        return SimConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid override:\n{e}") from e


def save_sim_config(config: SimConfig, out_dir: Path) -> Path:
    """Write the effective configuration snapshot next to the results."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / EFFECTIVE_CONFIG_NAME
    path.write_text(config.model_dump_json(indent=2))
    return path


# Create a default settings instance
settings = get_settings()
