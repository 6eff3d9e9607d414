# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import os
import sys
from pathlib import Path
from typing import Any, Optional

from loguru import logger as _logger

__all__ = ["logger", "LOG_LEVEL_ENV", "RUN_LOG_NAME", "attach_run_log"]

LOG_LEVEL_ENV = "SLIPGUARD_LOG_LEVEL"
RUN_LOG_NAME = "slipguard.log"

_logger.remove()

_logger.add(
    sys.stderr,
    level=os.getenv(LOG_LEVEL_ENV, "INFO").upper(),
    format=(
        "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
        "<level>{message}</level>"
    ),
)

logger: Any = _logger


def attach_run_log(run_dir: Path, level: Optional[str] = None) -> int:
    """
    Adds a plain-text sink at <run_dir>/slipguard.log that also records the
    keyword context of each message. Returns the handler id for logger.remove.
    """
    run_dir.mkdir(parents=True, exist_ok=True)
    return int(
        _logger.add(
            run_dir / RUN_LOG_NAME,
            level=(level or os.getenv(LOG_LEVEL_ENV, "INFO")).upper(),
            format="{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} - {message} | {extra}",
        )
    )
