"""
Configuration management using Pydantic Settings.
Loads process-level settings from environment variables and the .env file.

Run-level settings (schedule, dataset, smoothing policy, ...) live in
app.models.schemas.RunConfig and are assembled by app.services.config_store.
"""

from functools import lru_cache
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables (prefix UBR2S_).
    Nothing here changes the numerical result of a run.
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="UBR2S_",
        case_sensitive=False,
        extra="ignore"
    )

    # === Service Configuration ===
    APP_NAME: str = Field(
        default="UBR2S Adaptation Toolkit",
        description="Application name"
    )
    DEBUG: bool = Field(
        default=False,
        description="Debug mode flag (forces DEBUG log level)"
    )
    LOG_LEVEL: str = Field(
        default="INFO",
        description="Root log level"
    )

    # === Storage ===
    OUTPUT_DIR: str = Field(
        default="runs",
        description="Default output directory for reports, datasets and checkpoints"
    )
    CACHE_DIR: str = Field(
        default="data/cache",
        description="Directory for cached uncertainty tables"
    )
    UNCERTAINTY_CACHE: bool = Field(
        default=False,
        description="Reuse uncertainty tables keyed by (snapshot, target inputs, seed, iterations, rate)"
    )
    ABLATION_DB_NAME: str = Field(
        default="ablation.db",
        description="SQLite file (inside the output directory) holding finished ablation cells"
    )

    # === Randomness ===
    DEFAULT_SEED: int = Field(
        default=0,
        ge=0,
        description="Master seed used when neither the config nor --seed sets one"
    )

    def get_log_level(self) -> str:
        """Effective log level."""
        return "DEBUG" if self.DEBUG else self.LOG_LEVEL.upper()


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
