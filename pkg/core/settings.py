import os
from functools import lru_cache

from dotenv import load_dotenv
from pydantic import BaseModel, Field


class Settings(BaseModel):
    default_seed: int = Field(default=20240101, ge=0, description="Master seed used when none is given")
    threads: int = Field(default=1, ge=1, description="Default worker pool size")
    log_level: str = Field(default="WARNING", description="Root log level for the command line")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Read settings from the environment, after loading a .env file if present"""
    load_dotenv()
    defaults = Settings()
    return Settings(
        default_seed=int(os.getenv("NCV_DEFAULT_SEED", defaults.default_seed)),
        threads=int(os.getenv("NCV_THREADS", defaults.threads)),
        log_level=os.getenv("NCV_LOG_LEVEL", defaults.log_level).upper(),
    )
