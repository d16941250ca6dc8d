"""Process-level settings (environment and ``.env``)."""

from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Settings read from ``RIGBA_*`` environment variables or a local ``.env`` file."""

    model_config = SettingsConfigDict(
        env_prefix="RIGBA_", env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    log_level: str = "INFO"
    output_dir: Path = Path("runs")
    workers: int = Field(default=1, ge=1)

    sentry_dsn: str | None = Field(default=None, validation_alias="SENTRY_DSN")
    sentry_environment: str = Field(default="development", validation_alias="SENTRY_ENVIRONMENT")


@lru_cache
def get_settings() -> Settings:
    """Get or create the settings singleton."""
    return Settings()
