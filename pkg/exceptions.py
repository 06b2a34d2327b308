"""
Custom exception classes for iesbench
Specific error types with stable codes, run context and CLI exit-code mapping
"""

import time
import traceback
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

from constants import ERROR_CODES, EXIT_SOLVER_FAILURE, EXIT_VALIDATION_FAILURE


@dataclass
class ErrorContext:
    """Context information for errors"""
    command: Optional[str] = None
    case_path: Optional[str] = None
    mode: Optional[str] = None
    hour: Optional[int] = None
    design: Optional[str] = None
    timestamp: float = None

    def __post_init__(self):
        if self.timestamp is None:
            self.timestamp = time.time()


class IesBenchException(Exception):
    """Base exception for all iesbench errors"""

    exit_code = EXIT_VALIDATION_FAILURE

    def __init__(self, message: str, error_code: str = None,
                 context: ErrorContext = None, user_message: str = None,
                 should_log: bool = True):
        self.message = message
        self.error_code = error_code or "E000"
        self.context = context or ErrorContext()
        self.user_message = user_message or message
        self.should_log = should_log
        self.traceback_str = traceback.format_exc()
        super().__init__(self.message)

    def details(self) -> Dict[str, Any]:
        """Subclass-specific fields for structured logs"""
        return {}

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for logging"""
        return {
            "error_code": self.error_code,
            "message": self.message,
            "user_message": self.user_message,
            "context": {
                "command": self.context.command,
                "case_path": self.context.case_path,
                "mode": self.context.mode,
                "hour": self.context.hour,
                "design": self.context.design,
                "timestamp": self.context.timestamp,
            },
            "details": self.details(),
        }

    def get_user_message(self) -> str:
        return f"[{self.error_code}] {self.user_message}"


class ValidationException(IesBenchException):
    """Raised when an input value violates a domain invariant"""

    def __init__(self, message: str, field: str = None, **kwargs):
        self.field = field
        user_message = f"Invalid input{f' for {field}' if field else ''}: {message}"
        super().__init__(message, ERROR_CODES["VALIDATION"], user_message=user_message, **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"field": self.field}


class InfeasibleTransitionException(IesBenchException):
    """Raised when an hourly operation drives the battery outside its bounds"""

    def __init__(self, message: str, constraint: str = None, hour: int = None,
                 residual: float = None, **kwargs):
        self.constraint = constraint
        self.hour = hour
        self.residual = residual
        super().__init__(message, ERROR_CODES["INFEASIBLE_TRANSITION"], **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"constraint": self.constraint, "hour": self.hour, "residual": self.residual}


class SeriesLengthException(IesBenchException):
    """Raised when aligned time series have different lengths"""

    def __init__(self, message: str, expected: int = None, actual: int = None, **kwargs):
        self.expected = expected
        self.actual = actual
        super().__init__(message, ERROR_CODES["SERIES_LENGTH"], **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"expected": self.expected, "actual": self.actual}


class ModelValidationException(IesBenchException):
    """Raised when a linear model is malformed"""

    def __init__(self, message: str, **kwargs):
        super().__init__(message, ERROR_CODES["MODEL_VALIDATION"], **kwargs)


class SolverException(IesBenchException):
    """Base class for optimization failures"""

    exit_code = EXIT_SOLVER_FAILURE


class SolverNumericalException(SolverException):
    """Raised when the simplex cannot recover a well-conditioned basis"""

    def __init__(self, message: str, attempts: int = None, **kwargs):
        self.attempts = attempts
        super().__init__(message, ERROR_CODES["SOLVER_NUMERICAL"],
                         user_message="Solver hit a numerical failure", **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"attempts": self.attempts}


class SolverFailureException(SolverException):
    """Raised when a model that must be solvable returns a non-optimal status"""

    def __init__(self, message: str, status: str = None, **kwargs):
        self.status = status
        super().__init__(message, ERROR_CODES["SOLVER_FAILURE"], **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"status": self.status}


class InsufficientHistoryException(IesBenchException):
    """Raised when the backcaster lacks enough preceding days"""

    def __init__(self, message: str, required: int = None, available: int = None, **kwargs):
        self.required = required
        self.available = available
        super().__init__(message, ERROR_CODES["INSUFFICIENT_HISTORY"], **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"required": self.required, "available": self.available}


class BidMonotonicityException(SolverException):
    """Raised when a bidding plan breaks the non-decreasing offer rule"""

    def __init__(self, message: str, hour: int = None, violation: float = None, **kwargs):
        self.hour = hour
        self.violation = violation
        super().__init__(message, ERROR_CODES["BID_MONOTONICITY"], **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"hour": self.hour, "violation": self.violation}


class SchemaException(IesBenchException):
    """Raised when an input file violates its schema"""

    def __init__(self, message: str, file: str = None, line: int = None,
                 column: str = None, **kwargs):
        self.file = file
        self.line = line
        self.column = column
        location = ":".join(str(part) for part in (file, line, column) if part is not None)
        user_message = f"{location}: {message}" if location else message
        super().__init__(message, ERROR_CODES["SCHEMA"], user_message=user_message, **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"file": self.file, "line": self.line, "column": self.column}


class CaseValidationException(IesBenchException):
    """Raised when a network case fails structural validation"""

    def __init__(self, message: str, issues: List[str] = None, **kwargs):
        self.issues = issues or []
        super().__init__(message, ERROR_CODES["CASE_VALIDATION"],
                         user_message="; ".join(self.issues) or message, **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"issues": self.issues}


class ConfigurationException(IesBenchException):
    """Raised when configuration is invalid or missing"""

    def __init__(self, message: str, config_key: str = None, **kwargs):
        self.config_key = config_key
        super().__init__(message, ERROR_CODES["CONFIG"], **kwargs)

    def details(self) -> Dict[str, Any]:
        return {"config_key": self.config_key}


class SimulationAbortedException(IesBenchException):
    """Raised when one simulated hour fails; carries the partial log"""

    def __init__(self, message: str, hour: int = None, partial_log: Any = None,
                 cause: Exception = None, **kwargs):
        self.hour = hour
        self.partial_log = partial_log
        self.cause = cause
        super().__init__(message, ERROR_CODES["SIMULATION_ABORTED"], **kwargs)
        if isinstance(cause, SolverException):
            self.exit_code = EXIT_SOLVER_FAILURE

    def details(self) -> Dict[str, Any]:
        completed = len(self.partial_log) if self.partial_log is not None else 0
        return {"hour": self.hour, "completed_hours": completed,
                "cause": type(self.cause).__name__ if self.cause else None}


class ErrorHandler:
    """Centralized error handling, statistics and exit-code mapping"""

    def __init__(self, logger=None):
        self.logger = logger
        self.error_stats = {
            'total_errors': 0,
            'error_types': {},
            'last_error_time': None
        }

    def handle_exception(self, exception: Exception, context: ErrorContext = None) -> int:
        """Log an exception and return the CLI exit code it maps to"""
        self.error_stats['total_errors'] += 1
        self.error_stats['last_error_time'] = time.time()

        if not isinstance(exception, IesBenchException):
            exception = self._convert_exception(exception, context)

        error_type = type(exception).__name__
        self.error_stats['error_types'][error_type] = self.error_stats['error_types'].get(error_type, 0) + 1

        if exception.should_log and self.logger:
            ctx = context or exception.context
            hour = getattr(exception, "hour", None)
            self.logger.log_error_with_code(exception.message, exception.error_code,
                                            operation=ctx.command, mode=ctx.mode,
                                            hour=ctx.hour if hour is None else hour, design=ctx.design)

        return exception.exit_code

    def _convert_exception(self, exception: Exception, context: ErrorContext = None) -> IesBenchException:
        """Convert a generic exception to an IesBenchException"""
        error_message = str(exception)

        if isinstance(exception, (ValueError, TypeError)):
            return ValidationException(error_message, context=context)
        elif isinstance(exception, (FileNotFoundError, PermissionError)):
            return SchemaException(error_message, file=getattr(exception, "filename", None), context=context)
        else:
            return IesBenchException(error_message, error_code="E999",
                                     user_message="Unexpected error", context=context)

    def get_error_stats(self) -> Dict[str, Any]:
        return self.error_stats.copy()

    def reset_stats(self):
        self.error_stats = {
            'total_errors': 0,
            'error_types': {},
            'last_error_time': None
        }
