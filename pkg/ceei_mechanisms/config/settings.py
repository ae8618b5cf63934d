"""
Configuration settings for the CEEI mechanisms toolkit.

This module uses Pydantic Settings to manage solver tolerances, grid sizes and
integration defaults from environment variables and .env files with proper type
validation and default values.
"""

from typing import Literal, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class IntegrationSettings(BaseSettings):
    """Integration backend settings."""

    model_config = SettingsConfigDict(env_prefix="CEEI_INTEGRATION_")

    mode: Literal["quadrature", "mc", "auto"] = Field(default="auto")
    ray_nodes: int = Field(default=64, ge=4)
    mc_samples: int = Field(default=1_000_000, ge=1_000)
    chunk_size: int = Field(default=65_536, ge=1_024)
    seed: int = Field(default=20240601, ge=0)
    # log-sum-exp temperature of the point-set potential
    smoothing: float = Field(default=1e-3, ge=0.0)

    @field_validator("ray_nodes")
    @classmethod
    def validate_ray_nodes(cls, v):
        if v % 2:
            raise ValueError(f"ray_nodes must be even so the error estimate can halve it, got {v}")
        return v


class SolverSettings(BaseSettings):
    """CEEI potential minimization settings."""

    model_config = SettingsConfigDict(env_prefix="CEEI_SOLVER_")

    tol_grad_quadrature: float = Field(default=1e-8, gt=0.0)
    tol_grad_mc: float = Field(default=1e-4, gt=0.0)
    tol_clear: float = Field(default=1e-3, gt=0.0)
    max_iters: int = Field(default=100, ge=1)
    hessian_step: float = Field(default=1e-5, gt=0.0)
    armijo: float = Field(default=1e-4, gt=0.0, lt=1.0)
    backtrack: float = Field(default=0.5, gt=0.0, lt=1.0)
    min_step: float = Field(default=1e-10, gt=0.0)
    max_condition: float = Field(default=1e12, gt=1.0)
    max_newton_step: float = Field(default=5.0, gt=0.0)


class ShadowSettings(BaseSettings):
    """Shadow-cost settings."""

    model_config = SettingsConfigDict(env_prefix="CEEI_SHADOW_")

    method: Literal["auto", "geometric", "finite_difference"] = Field(default="auto")
    fd_step: float = Field(default=1e-3, gt=0.0, lt=0.5)
    convention: Literal["barycentric", "switching"] = Field(default="barycentric")


class CertificateSettings(BaseSettings):
    """Optimality certificate settings."""

    model_config = SettingsConfigDict(env_prefix="CEEI_CERTIFICATE_")

    tail_grid_size: int = Field(default=2001, ge=11)
    tail_tol: float = Field(default=1e-6, ge=0.0)
    balance_tol: float = Field(default=1e-6, ge=0.0)
    ratio_grid_size: int = Field(default=1001, ge=11)
    ratio_tol: float = Field(default=1e-9, ge=0.0)


class TwoGoodSettings(BaseSettings):
    """Two-good optimal mechanism settings."""

    model_config = SettingsConfigDict(env_prefix="CEEI_TWOGOOD_")

    z_grid_size: int = Field(default=2001, ge=11)
    golden_tol: float = Field(default=1e-6, gt=0.0)
    stat_sigmas: float = Field(default=3.0, gt=0.0)
    k_grid_step: float = Field(default=0.005, gt=0.0, le=0.5)
    ratio_grid_size: int = Field(default=201, ge=11)


class LotterySettings(BaseSettings):
    """Lottery game fixed-point settings."""

    model_config = SettingsConfigDict(env_prefix="CEEI_LOTTERY_")

    alpha: float = Field(default=0.5, gt=0.0, le=1.0)
    tol: float = Field(default=1e-10, gt=0.0)
    max_iters: int = Field(default=2000, ge=1)
    empty_region_growth: float = Field(default=10.0, gt=1.0)


class LoggingSettings(BaseSettings):
    """Logging settings."""

    model_config = SettingsConfigDict(env_prefix="CEEI_LOG_")

    level: str = Field(default="INFO")
    renderer: Literal["json", "console"] = Field(default="json")
    log_path: Optional[str] = Field(default=None)

    @field_validator("level")
    @classmethod
    def validate_log_level(cls, v):
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Invalid log level: {v}. Must be one of {valid_levels}")
        return v.upper()


class Settings(BaseSettings):
    """Main settings class combining all configuration sections."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    integration: IntegrationSettings = Field(default_factory=IntegrationSettings)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    shadow: ShadowSettings = Field(default_factory=ShadowSettings)
    certificate: CertificateSettings = Field(default_factory=CertificateSettings)
    twogood: TwoGoodSettings = Field(default_factory=TwoGoodSettings)
    lottery: LotterySettings = Field(default_factory=LotterySettings)
    logging: LoggingSettings = Field(default_factory=LoggingSettings)


# Global settings instance
settings = Settings()
