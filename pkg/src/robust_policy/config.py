"""Configuration management for robust-policy."""

import os
from enum import Enum
from pathlib import Path
from typing import Any

import yaml
from pydantic import Field
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    YamlConfigSettingsSource,
)


class WeightMode(str, Enum):
    """How the probability weights are formed."""

    GENERATIVE = "generative"
    PROPENSITY = "propensity"


class SearchStrategy(str, Enum):
    """Search over the cost grid for the largest qualifying candidate."""

    GRID_SCAN = "grid-scan"
    INTERVAL_HALVING = "interval-halving"


def get_config_dir() -> Path:
    """Get the configuration directory path."""
    config_dir = Path.home() / ".robust-policy"
    config_dir.mkdir(parents=True, exist_ok=True)
    return config_dir


def get_config_file() -> Path:
    """Get the configuration file path."""
    return get_config_dir() / "config.yaml"


class RobustPolicySettings(BaseSettings):
    """Defaults shared by the CLI commands.

    Values come from explicit arguments first, then ``ROBUST_POLICY_*``
    environment variables, then ``~/.robust-policy/config.yaml``.
    """

    model_config = SettingsConfigDict(env_prefix="ROBUST_POLICY_", extra="ignore")

    alpha: float = Field(0.2, gt=0.0, lt=1.0, description="Tail level of the cost limit")
    grid_points: int = Field(2001, ge=2, description="Uniform cost grid size")
    seed: int = Field(0, ge=0, description="Base random seed")
    mode: WeightMode = Field(WeightMode.GENERATIVE, description="Weight construction")
    strategy: SearchStrategy = Field(
        SearchStrategy.INTERVAL_HALVING, description="Cost grid search strategy"
    )
    conservative_test_mass: bool = Field(
        False, description="Place the test-point mass at +inf instead of its own score"
    )
    components: int = Field(4, ge=1, description="Gaussian mixture components")
    max_iter: int = Field(200, ge=1, description="EM iteration cap")
    tol: float = Field(1e-6, gt=0.0, description="EM tolerance on mean log-likelihood")
    covariance_floor: float = Field(1e-6, gt=0.0, description="Added to covariance diagonals")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            YamlConfigSettingsSource(settings_cls, yaml_file=get_config_file()),
        )


def config_exists() -> bool:
    """Check if configuration file exists."""
    return get_config_file().exists()


def save_settings(settings: RobustPolicySettings) -> None:
    """Save settings to the configuration file."""
    config_file = get_config_file()
    data = settings.model_dump(mode="json")

    with open(config_file, "w") as f:
        yaml.safe_dump(data, f, default_flow_style=False)

    try:
        os.chmod(config_file, 0o600)
    except OSError:
        pass  # Windows may not support chmod


def get_settings(**overrides: Any) -> RobustPolicySettings:
    """Load settings, letting non-None ``overrides`` win over every source."""
    explicit = {key: value for key, value in overrides.items() if value is not None}
    return RobustPolicySettings(**explicit)


def delete_config() -> None:
    """Delete configuration file."""
    config_file = get_config_file()
    if config_file.exists():
        config_file.unlink()
