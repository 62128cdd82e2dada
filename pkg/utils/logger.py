"""
Logging Utility
Structured logging with context and formatting for the CTAL-VAE toolkit
"""

import logging
import os
import sys
import time
from functools import wraps
from pathlib import Path
from typing import Any, Dict, Optional

from pythonjsonlogger import jsonlogger

LOG_ENV_VAR = "CTALVAE_LOG"

# Accepted values of CTALVAE_LOG
ENV_LEVELS = {
    'error': logging.ERROR,
    'info': logging.INFO,
    'debug': logging.DEBUG,
}


class ContextLogger(logging.Logger):
    """
    Logger that stamps every record with a mutable context dict
    (seed, model kind, phase, domain, ...)
    """

    def __init__(self, name: str, level=logging.NOTSET):
        super().__init__(name, level)
        self.context: Dict[str, Any] = {}

    def set_context(self, **kwargs):
        """Add context to logger"""
        self.context.update(kwargs)

    def clear_context(self):
        """Clear all context"""
        self.context.clear()

    def _log(self, level, msg, args, exc_info=None, extra=None, stack_info=False, stacklevel=1):
        """Merge the logger context (and the parent's) into the record"""
        extra = dict(extra or {})
        merged: Dict[str, Any] = {}
        parent = self.parent
        while parent is not None:
            merged = {**getattr(parent, 'context', {}), **merged}
            parent = parent.parent
        merged.update(self.context)
        merged.update(extra.pop('context', {}))
        extra['context'] = merged
        super()._log(level, msg, args, exc_info, extra, stack_info, stacklevel + 1)


class ContextFormatter(logging.Formatter):
    """
    Plain-text formatter appending the record context as [k=v ...]
    """

    def format(self, record):
        line = super().format(record)
        context = getattr(record, 'context', None)
        if context:
            pairs = ' '.join(f"{k}={v}" for k, v in context.items())
            line = f"{line} [{pairs}]"
        return line


def _json_formatter() -> logging.Formatter:
    return jsonlogger.JsonFormatter(
        '%(asctime)s %(levelname)s %(name)s %(message)s',
        rename_fields={'levelname': 'level', 'name': 'logger'},
        json_default=str,
    )


def resolve_level(level: Optional[str] = None) -> int:
    """
    Resolve the effective logging level

    Args:
        level: Explicit level name; falls back to CTALVAE_LOG, then INFO

    Returns:
        Numeric logging level
    """
    if level:
        return getattr(logging, level.upper())

    env_value = os.environ.get(LOG_ENV_VAR)
    if env_value is None:
        return logging.INFO

    resolved = ENV_LEVELS.get(env_value.strip().lower())
    if resolved is None:
        logging.getLogger("ctalvae").warning(
            f"Ignoring {LOG_ENV_VAR}={env_value!r}; expected one of {sorted(ENV_LEVELS)}"
        )
        return logging.INFO
    return resolved


def setup_logger(
    name: str = "ctalvae",
    level: Optional[str] = None,
    log_file: Optional[str] = None,
    log_dir: str = "./logs",
    json_format: bool = False
) -> ContextLogger:
    """
    Setup and configure a logger

    Args:
        name: Logger name
        level: Logging level (DEBUG, INFO, WARNING, ERROR); defaults to CTALVAE_LOG
        log_file: Log file name (optional)
        log_dir: Directory for log files
        json_format: Whether to emit JSON records

    Returns:
        Configured ContextLogger instance
    """
    logging.setLoggerClass(ContextLogger)

    logger = logging.getLogger(name)
    numeric_level = resolve_level(level)
    logger.setLevel(numeric_level)
    logger.handlers.clear()
    logger.propagate = False

    # stdout carries command output, logs go to stderr
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(numeric_level)

    if json_format:
        console_formatter = _json_formatter()
    else:
        console_formatter = ContextFormatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

    console_handler.setFormatter(console_formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_dir)
        log_path.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_path / log_file)
        file_handler.setLevel(logging.DEBUG)
        if json_format:
            file_handler.setFormatter(_json_formatter())
        else:
            file_handler.setFormatter(ContextFormatter(
                '%(asctime)s - %(name)s - %(levelname)s - %(module)s:%(funcName)s:%(lineno)d - %(message)s',
                datefmt='%Y-%m-%d %H:%M:%S'
            ))
        logger.addHandler(file_handler)

    return logger


def get_logger(name: str = "ctalvae") -> ContextLogger:
    """
    Get or create a logger

    Args:
        name: Logger name

    Returns:
        ContextLogger instance
    """
    logging.setLoggerClass(ContextLogger)
    return logging.getLogger(name)


class LoggerContext:
    """
    Context manager for temporary logger context
    """

    def __init__(self, logger: ContextLogger, **context):
        """
        Initialize logger context

        Args:
            logger: Logger to add context to
            **context: Context key-value pairs
        """
        self.logger = logger
        self.context = context
        self.old_context = {}

    def __enter__(self):
        """Enter context"""
        self.old_context = self.logger.context.copy()
        self.logger.set_context(**self.context)
        return self.logger

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Exit context"""
        self.logger.context = self.old_context
        return False


def log_performance(logger: Optional[ContextLogger] = None):
    """
    Decorator to log function wall time

    Args:
        logger: Logger to use (defaults to the package logger)
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            log = logger or get_logger()
            func_name = func.__name__
            start_time = time.perf_counter()

            try:
                result = func(*args, **kwargs)
            except Exception as e:
                duration = time.perf_counter() - start_time
                log.error(f"{func_name} failed after {duration:.2f}s: {e}")
                raise

            duration = time.perf_counter() - start_time
            log.info(f"{func_name} completed in {duration:.2f}s")
            return result

        return wrapper
    return decorator
