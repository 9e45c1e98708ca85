"""
PATrack Observability - Logging.

structlog on top of stdlib logging. Log lines go to stderr; stdout carries
command output only.
"""

from __future__ import annotations

import logging
import sys

import structlog

from patrack.config import get_settings

_configured = False


def configure_logging(level: str | None = None, json_lines: bool | None = None) -> None:
    """Configure structlog once per process (later calls only adjust the level)."""
    global _configured
    settings = get_settings()
    level = (level or settings.log_level).upper()
    json_lines = settings.log_json if json_lines is None else json_lines

    root = logging.getLogger()
    root.setLevel(level)
    if _configured:
        return

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.handlers = [handler]

    renderer: structlog.types.Processor = (
        structlog.processors.JSONRenderer(sort_keys=True)
        if json_lines
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            structlog.processors.format_exc_info,
            renderer,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )
    _configured = True
