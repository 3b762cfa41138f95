"""Runtime settings, read from the environment (prefix ``VLP_``) and an optional ``.env`` file."""

from functools import lru_cache
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="VLP_", env_file=".env", extra="ignore")

    seed: int = Field(2024, description="Master seed for every random stream")
    workers: int = Field(1, ge=1, description="Worker processes for Monte Carlo and experiments")
    float_format: str = Field(".12g", description="Format spec applied to every numeric output cell")
    grad_tol: float = Field(1e-10, gt=0)
    max_iters: int = Field(200, ge=1)
    log_level: str = "INFO"
    dataset_path: Optional[Path] = Field(None, description="Local copy of the published 158-point dataset")


@lru_cache
def get_settings() -> Settings:
    """Get the process-wide settings instance."""
    return Settings()
