#!/usr/bin/env python3
"""
Runtime configuration

Values come from the environment (optionally a .env file in the working
directory) under the PEER_ prefix and are validated by pydantic.
"""

import os
import logging
from typing import Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)


class Settings(BaseModel):
    log_level: str = "INFO"

    # coupled forward/adjoint solver
    kkt_tol: float = Field(1e-12, gt=0)
    kkt_residual_tol: float = Field(1e-11, gt=0)
    max_sweeps: int = Field(60, ge=1)
    stall_window: int = Field(5, ge=1)
    stall_ratio: float = Field(0.9, gt=0)
    max_newton: int = Field(50, ge=1)
    fd_step: float = Field(1e-7, gt=0)

    # method analysis
    order_tol: float = Field(1e-8, gt=0)
    ntheta: int = Field(2000, ge=8)
    scan_workers: int = Field(4, ge=1)

    # reference solutions
    reference_backend: Literal["collocation", "kkt"] = "collocation"
    reference_tol: float = Field(1e-10, gt=0)
    reference_agreement: float = Field(1e-2, gt=0)

    # report service
    cache_ttl: int = Field(3600, ge=1)
    api_host: str = "127.0.0.1"
    api_port: int = Field(8765, ge=1, le=65535)


_ENV_PREFIX = "PEER_"
_settings: Optional[Settings] = None


def _read_environment() -> dict:
    """Collect PEER_* variables that correspond to Settings fields"""
    values = {}
    for name in Settings.model_fields:
        raw = os.getenv(f"{_ENV_PREFIX}{name.upper()}")
        if raw is not None:
            values[name] = raw
    return values


def reload_settings(env_file: str = ".env") -> Settings:
    """Re-read the environment (and .env if present) and replace the cached settings"""
    global _settings
    if os.path.exists(env_file):
        load_dotenv(env_file, override=True)
    _settings = Settings(**_read_environment())
    logger.debug(f"Settings loaded: {_settings.model_dump()}")
    return _settings


def get_settings() -> Settings:
    """Get the process-wide settings (loaded on first use)"""
    if _settings is None:
        return reload_settings()
    return _settings
