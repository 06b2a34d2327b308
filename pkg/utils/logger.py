"""
Logging configuration for iesbench
Structured JSON file logs, plain console output and solver/performance helpers
"""

import json
import logging
import logging.handlers
import os
import sys
from datetime import datetime
from typing import Optional

import config
from constants import LOG_BACKUP_COUNT, LOG_DATE_FORMAT, LOG_FORMAT, LOG_MAX_BYTES, LOGS_DIR

_STRUCTURED_FIELDS = (
    "run_id", "hour", "mode", "design", "duration", "error_code",
    "status", "operation", "model", "iterations", "nodes", "objective", "backend",
)


class StructuredFormatter(logging.Formatter):
    """Custom formatter that outputs structured logs in JSON format"""

    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            "timestamp": datetime.fromtimestamp(record.created).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)

        for field in _STRUCTURED_FIELDS:
            if hasattr(record, field):
                log_entry[field] = getattr(record, field)

        return json.dumps(log_entry, ensure_ascii=False, default=str)


class IesLogger:
    """Logger wrapper with structured extras and solver/performance helpers"""

    def __init__(self, name: str = "iesbench"):
        self.name = name
        self.logger = logging.getLogger(name)
        self._setup_logger()

    def _setup_logger(self):
        """Setup console output and, unless disabled, rotating structured files"""
        self.logger.handlers.clear()

        level = config.log_level()
        self.logger.setLevel(getattr(logging, level, logging.INFO))

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))
        console_handler.setLevel(getattr(logging, level, logging.INFO))
        self.logger.addHandler(console_handler)

        if config.log_to_file():
            os.makedirs(LOGS_DIR, exist_ok=True)
            file_name = self.name.split(".")[0]

            file_handler = logging.handlers.RotatingFileHandler(
                filename=os.path.join(LOGS_DIR, f"{file_name}.log"),
                maxBytes=LOG_MAX_BYTES,
                backupCount=LOG_BACKUP_COUNT,
                encoding="utf-8",
            )
            file_handler.setFormatter(StructuredFormatter())
            file_handler.setLevel(logging.DEBUG)

            error_handler = logging.handlers.RotatingFileHandler(
                filename=os.path.join(LOGS_DIR, f"{file_name}_errors.log"),
                maxBytes=LOG_MAX_BYTES,
                backupCount=LOG_BACKUP_COUNT,
                encoding="utf-8",
            )
            error_handler.setFormatter(StructuredFormatter())
            error_handler.setLevel(logging.ERROR)

            self.logger.addHandler(file_handler)
            self.logger.addHandler(error_handler)

        self.logger.propagate = False

    def debug(self, message: str, **kwargs):
        self.logger.debug(message, extra=kwargs)

    def info(self, message: str, **kwargs):
        self.logger.info(message, extra=kwargs)

    def warning(self, message: str, **kwargs):
        self.logger.warning(message, extra=kwargs)

    def error(self, message: str, exc_info: bool = False, **kwargs):
        self.logger.error(message, exc_info=exc_info, extra=kwargs)

    def critical(self, message: str, exc_info: bool = False, **kwargs):
        self.logger.critical(message, exc_info=exc_info, extra=kwargs)

    def log_performance(self, operation: str, duration: float, **kwargs):
        """Log wall-clock duration of an operation"""
        extra = {"operation": operation, "duration": duration, **kwargs}
        self.logger.info(f"Performance: {operation} took {duration:.2f}s", extra=extra)

    def log_solve(self, model: str, status: str, duration: float,
                  iterations: Optional[int] = None, **kwargs):
        """Log one optimization solve at debug level"""
        extra = {"model": model, "status": status, "duration": duration, **kwargs}
        if iterations is not None:
            extra["iterations"] = iterations
        self.logger.debug(f"Solve {model}: {status} in {duration:.3f}s", extra=extra)

    def log_error_with_code(self, message: str, error_code: str, **kwargs):
        """Log a coded failure; run context fields (mode, hour, design) land in the structured record"""
        extra = {"error_code": error_code, **{k: v for k, v in kwargs.items() if v is not None}}
        self.logger.error(f"[{error_code}] {message}", extra=extra)


_loggers = {}


def get_logger(name: str = "iesbench") -> IesLogger:
    """Get a logger instance, one per name"""
    if name not in _loggers:
        _loggers[name] = IesLogger(name)
    return _loggers[name]


def log_performance(operation: str, duration: float, **kwargs):
    """Log performance using the package logger"""
    get_logger().log_performance(operation, duration, **kwargs)
