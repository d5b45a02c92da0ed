# src/tripletswap/adapters/config.py
from typing import Any

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class AppConfig(BaseSettings):
    # App & logging
    ENV: str = Field(default="dev")
    LOG_LEVEL: str = Field(default="INFO")

    # compute
    DEVICE: str = Field(default="cpu")
    NUM_WORKERS: int = Field(default=0)

    # where CLI runs put artifacts when no --out is given
    ARTIFACT_ROOT: str = Field(default="artifacts")

    model_config = SettingsConfigDict(
        env_prefix="TRIPLETSWAP_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def _upper_level(cls, v: Any) -> Any:
        if isinstance(v, str):
            return v.strip().upper()
        return v

    @field_validator("DEVICE", mode="before")
    @classmethod
    def _known_device(cls, v: Any) -> Any:
        s = str(v).strip().lower()
        if not (s == "cpu" or s == "mps" or s.startswith("cuda")):
            raise ValueError("DEVICE must be cpu, mps or cuda[:N]")
        return s

    @field_validator("NUM_WORKERS", mode="before")
    @classmethod
    def _non_negative_workers(cls, v: Any) -> Any:
        n = int(v)
        if n < 0:
            raise ValueError("NUM_WORKERS must be >= 0")
        return n


config = AppConfig()
