"""
Configuration management for the Statistical JKO Lab.

Pydantic BaseSettings implementation that loads ambient configuration from
WGF_* environment variables and an optional .env file, with validation and
type conversion. Numerical kernels fall back to these values whenever a
tolerance is not passed explicitly.
"""

import logging
import os
from pathlib import Path
from typing import List, Optional

from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..core.exceptions import ConfigError


class Settings(BaseSettings):
    """
    Ambient settings for the lab.

    Every field has a default so a bare checkout runs without a .env file.
    """

    # Application settings
    environment: str = Field(default="development", description="Environment: development, testing, production")
    log_level: str = Field(default="INFO", description="Logging level")
    log_format: str = Field(default="console", description="Log renderer: console or json")

    # Execution settings
    default_threads: int = Field(default=1, description="Worker threads for replication loops")
    output_root: str = Field(default="runs", description="Directory for run artifacts when --out is not given")

    # Grid and density tolerances
    mass_tol: float = Field(default=1e-8, description="Trapezoidal unit-mass tolerance")
    marginal_tol: float = Field(default=1e-8, description="Coupling marginal tolerance")
    band_gap_tol: float = Field(default=1e-9, description="Allowed gap between banded and exact transport cost")
    fe_tol: float = Field(default=1e-6, description="Free-energy monotonicity tolerance")
    renormalize_every_step: bool = Field(default=True, description="Renormalize densities after every step")

    # Quadrature
    quadrature_order: int = Field(default=20, description="Gauss-Hermite nodes per axis")
    max_quadrature_dim: int = Field(default=3, description="Largest dimension for tensor quadrature")

    # Estimating-equation solver
    newton_max_iter: int = Field(default=100, description="Newton iteration cap")
    newton_eq_tol: float = Field(default=1e-10, description="Residual tolerance per observation")
    newton_max_halvings: int = Field(default=30, description="Step halvings when the residual does not decrease")

    model_config = SettingsConfigDict(
        env_prefix="WGF_",
        env_file=Path(__file__).parent.parent.parent.parent / ".env",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        """Ensure the level is a logging level name."""
        level = v.upper()
        if level not in logging.getLevelNamesMapping():
            raise ValueError(f"Unknown log level: {v}")
        return level

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v):
        """Only console and json renderers exist."""
        if v not in ("console", "json"):
            raise ValueError("log_format must be 'console' or 'json'")
        return v

    @field_validator("default_threads", "quadrature_order", "max_quadrature_dim", "newton_max_iter")
    @classmethod
    def validate_positive_int(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("mass_tol", "marginal_tol", "band_gap_tol", "fe_tol", "newton_eq_tol")
    @classmethod
    def validate_positive_tolerance(cls, v):
        if not v > 0:
            raise ValueError("tolerances must be positive")
        return v

    @model_validator(mode="after")
    def validate_production_logging(self):
        """Production runs log as JSON."""
        if self.environment.lower() == "production" and self.log_format != "json":
            raise ValueError("production environment requires log_format=json")
        return self

    @property
    def is_development(self) -> bool:
        """Check if running in development mode."""
        return self.environment.lower() == "development"

    @property
    def output_path(self) -> str:
        """Get the output root, creating it if it doesn't exist."""
        os.makedirs(self.output_root, exist_ok=True)
        return self.output_root


# Global settings instance
_settings_instance: Optional[Settings] = None


def get_settings() -> Settings:
    """Get the global settings instance"""
    global _settings_instance
    if _settings_instance is None:
        _settings_instance = Settings()
    return _settings_instance


def reset_settings() -> None:
    """Drop the cached instance so the next call re-reads the environment."""
    global _settings_instance
    _settings_instance = None


def validate_settings() -> Settings:
    """
    Load and validate settings.

    Returns:
        The validated settings instance

    Raises:
        ConfigError: If any WGF_* variable is invalid
    """
    try:
        return get_settings()
    except ValidationError as e:
        problems: List[str] = [
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        ]
        raise ConfigError(
            "Invalid environment configuration:\n  " + "\n  ".join(problems)
            + "\nPlease fix these WGF_* variables in your .env file or environment."
        ) from e
