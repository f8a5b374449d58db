#!/usr/bin/env python3
"""
Error Handling System
Provides the detector's exception classes, recovery suggestions,
user-friendly error messages, and the stable exit-code contract.
"""

import json
import logging
import traceback
from dataclasses import dataclass
from datetime import datetime
from enum import IntEnum
from typing import Any, Dict, List, Optional


class ExitCode(IntEnum):
    """Standardized exit codes for CLI operations"""
    SUCCESS = 0              # Operation completed successfully
    VALIDATION_FAILURE = 1   # Bad config, shape contract, failed oracle, divergence
    IO_FAILURE = 2           # Unreadable/unwritable file, malformed image or checkpoint


@dataclass
class ErrorContext:
    """Context information for error reporting and recovery"""
    operation: str                               # Operation being performed
    path: Optional[str] = None                   # File involved
    details: Optional[Dict[str, Any]] = None     # Shapes, values, step numbers
    timestamp: Optional[str] = None              # When error occurred
    recovery_suggestions: List[str] = None       # Suggested recovery actions


class DetectorError(Exception):
    """Base detector error with standardized exit code and context"""

    def __init__(self, message: str, exit_code: ExitCode = ExitCode.VALIDATION_FAILURE,
                 context: Optional[ErrorContext] = None, cause: Optional[Exception] = None):
        super().__init__(message)
        self.message = message
        self.exit_code = exit_code
        self.context = context or ErrorContext(operation="unknown")
        self.cause = cause
        self.timestamp = datetime.now().isoformat()

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to dictionary for JSON serialization"""
        return {
            "error_type": self.__class__.__name__,
            "message": self.message,
            "exit_code": int(self.exit_code),
            "timestamp": self.timestamp,
            "context": {
                "operation": self.context.operation,
                "path": self.context.path,
                "details": self.context.details,
                "recovery_suggestions": self.context.recovery_suggestions or []
            },
            "cause": str(self.cause) if self.cause else None
        }

    def get_user_message(self) -> str:
        """Get user-friendly error message with suggestions"""
        msg = f"❌ {self.message}"

        if self.context and self.context.recovery_suggestions:
            msg += "\n\n💡 Suggested solutions:"
            for i, suggestion in enumerate(self.context.recovery_suggestions, 1):
                msg += f"\n   {i}. {suggestion}"

        return msg


class ShapeError(DetectorError):
    """Tensor or mask shapes violate an operator's contract"""

    def __init__(self, message: str, context: Optional[ErrorContext] = None, cause: Optional[Exception] = None):
        super().__init__(message, ExitCode.VALIDATION_FAILURE, context, cause)


class ConfigError(DetectorError):
    """Invalid run configuration or command arguments"""

    def __init__(self, message: str, context: Optional[ErrorContext] = None, cause: Optional[Exception] = None):
        super().__init__(message, ExitCode.VALIDATION_FAILURE, context, cause)


class GeometryError(DetectorError):
    """Degenerate or invalid polygon"""

    def __init__(self, message: str, context: Optional[ErrorContext] = None, cause: Optional[Exception] = None):
        super().__init__(message, ExitCode.VALIDATION_FAILURE, context, cause)


class NumericalError(DetectorError):
    """Non-finite values, invalid probabilities, or a non-deterministic operator"""

    def __init__(self, message: str, context: Optional[ErrorContext] = None, cause: Optional[Exception] = None):
        super().__init__(message, ExitCode.VALIDATION_FAILURE, context, cause)


class DivergenceError(NumericalError):
    """Training loss or gradients became non-finite"""

    def __init__(self, message: str, step: int, last_good_checkpoint: Optional[str] = None,
                 context: Optional[ErrorContext] = None, cause: Optional[Exception] = None):
        if context is None:
            context = ErrorContext(operation="train")
        context.path = last_good_checkpoint
        context.details = dict(context.details or {}, step=step)
        super().__init__(message, context, cause)
        self.step = step
        self.last_good_checkpoint = last_good_checkpoint


class VerificationError(DetectorError):
    """One or more built-in oracles failed"""

    def __init__(self, message: str, failed_checks: List[str] = None,
                 context: Optional[ErrorContext] = None, cause: Optional[Exception] = None):
        super().__init__(message, ExitCode.VALIDATION_FAILURE, context, cause)
        self.failed_checks = failed_checks or []


class DetectorIOError(DetectorError):
    """File could not be read, written, or parsed"""

    def __init__(self, message: str, path: Optional[str] = None, context: Optional[ErrorContext] = None,
                 cause: Optional[Exception] = None):
        if context is None:
            context = ErrorContext(operation="file_io")
        if path is not None:
            context.path = path
        super().__init__(message, ExitCode.IO_FAILURE, context, cause)


class ImageFormatError(DetectorIOError):
    """Malformed or unsupported Netpbm/PNG file"""


class CheckpointError(DetectorIOError):
    """Unreadable weights container or checkpoint/model mismatch"""


class AnnotationError(DetectorIOError):
    """Malformed annotation or detection line"""


class ErrorRecoveryManager:
    """Manages error recovery strategies and suggestions"""

    def __init__(self):
        self.recovery_strategies = {
            "shape_contract": [
                "Check that image height and width are divisible by 32 (use --short-side to resize)",
                "Verify model.base_channels and model.fused_width are divisible by 4",
            ],
            "config_key": [
                "Check the key spelling against templates/configs/default.cfg",
                "Use section prefixes such as model.gamma=0.4 or train.base_lr=0.007",
            ],
            "degenerate_polygon": [
                "Check the annotation file for polygons with fewer than 3 distinct points",
                "Mark unreadable instances with a trailing ### instead of collapsing them",
            ],
            "non_finite": [
                "Lower train.base_lr or enable gradient inspection with --verbose",
                "Resume from the last good checkpoint reported above",
            ],
            "checkpoint": [
                "Make sure the checkpoint was written by the same model config (base_channels, fused_width)",
                "Re-run train to regenerate weights.stdw if the file is truncated",
            ],
            "image_format": [
                "Only binary PGM (P5) and PPM (P6) with max value 255 are supported",
                "Enable io.enable_png=true to read PNG files",
            ],
            "file_missing": [
                "Check the path spelling and that image/annotation stems match",
                "List the directory to confirm the files exist",
            ],
            "verification": [
                "Re-run verify with --verbose to see the failing oracle's numbers",
                "Run the unit tests for the failing module",
            ],
        }

    def get_recovery_suggestions(self, error_type: str, context: Optional[ErrorContext] = None) -> List[str]:
        """Get recovery suggestions for specific error type"""
        suggestions = list(self.recovery_strategies.get(error_type, []))

        if context and context.path and error_type == "file_missing":
            suggestions.append(f"Expected file: {context.path}")

        return suggestions

    def enhance_error_context(self, error: DetectorError) -> DetectorError:
        """Add recovery suggestions based on error type"""
        if not error.context:
            error.context = ErrorContext(operation="unknown")

        if not error.context.recovery_suggestions:
            error_type = self._classify_error(error)
            error.context.recovery_suggestions = self.get_recovery_suggestions(error_type, error.context)

        return error

    def _classify_error(self, error: DetectorError) -> str:
        """Classify error to determine appropriate recovery strategy"""
        if isinstance(error, ShapeError):
            return "shape_contract"
        if isinstance(error, ConfigError):
            return "config_key"
        if isinstance(error, GeometryError):
            return "degenerate_polygon"
        if isinstance(error, NumericalError):
            return "non_finite"
        if isinstance(error, VerificationError):
            return "verification"
        if isinstance(error, CheckpointError):
            return "checkpoint"
        if isinstance(error, ImageFormatError):
            return "image_format"
        if isinstance(error, DetectorIOError):
            return "file_missing"
        return "general"


class ErrorHandler:
    """Central error handling and reporting system"""

    def __init__(self, logger: Optional[logging.Logger] = None):
        self.logger = logger or logging.getLogger(__name__)
        self.recovery_manager = ErrorRecoveryManager()

    def handle_error(self, error: Exception, operation: str = "unknown", json_output: bool = False) -> int:
        """
        Handle error with appropriate logging, user messaging, and exit code
        Returns appropriate exit code
        """
        if not isinstance(error, DetectorError):
            detector_error = self._convert_to_detector_error(error, operation)
        else:
            detector_error = error

        detector_error = self.recovery_manager.enhance_error_context(detector_error)

        self._log_error(detector_error)

        if json_output:
            print(json.dumps(detector_error.to_dict(), indent=2))
        else:
            print(detector_error.get_user_message())

        return int(detector_error.exit_code)

    def _convert_to_detector_error(self, error: Exception, operation: str) -> DetectorError:
        """Convert standard exception to DetectorError"""
        context = ErrorContext(operation=operation)
        error_message = str(error)

        if isinstance(error, FileNotFoundError):
            context.path = getattr(error, "filename", None)
            return DetectorIOError(f"File not found: {error_message}", context=context, cause=error)
        elif isinstance(error, OSError):
            return DetectorIOError(f"I/O error: {error_message}", context=context, cause=error)
        elif isinstance(error, ValueError):
            return ConfigError(f"Invalid value: {error_message}", context, error)
        else:
            return DetectorError(f"Unexpected error: {error_message}", ExitCode.VALIDATION_FAILURE, context, error)

    def _log_error(self, error: DetectorError):
        """Log error with full context"""
        log_data = {
            "timestamp": error.timestamp,
            "error_type": error.__class__.__name__,
            "message": error.message,
            "exit_code": int(error.exit_code),
            "operation": error.context.operation if error.context else "unknown",
            "path": error.context.path if error.context else None,
            "details": error.context.details if error.context else None
        }

        if error.exit_code == ExitCode.IO_FAILURE:
            self.logger.error(f"I/O failure: {json.dumps(log_data, default=str)}")
        else:
            self.logger.warning(f"Validation failure: {json.dumps(log_data, default=str)}")

        if error.cause:
            self.logger.debug(f"Stack trace: {traceback.format_exception(type(error.cause), error.cause, error.cause.__traceback__)}")


def handle_cli_error(func):
    """Decorator for CLI command functions to handle errors consistently"""
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except DetectorError as e:
            handler = ErrorHandler()
            return handler.handle_error(e, operation=func.__name__)
        except Exception as e:
            handler = ErrorHandler()
            return handler.handle_error(e, operation=func.__name__)

    return wrapper


def require_shape(condition: bool, message: str, operation: str, **details: Any) -> None:
    """Raise ShapeError with the offending shapes attached when condition is false"""
    if not condition:
        raise ShapeError(message, ErrorContext(operation=operation, details=details or None))
