"""
Run Logger

Logging for detector runs: console output that respects --verbose/--quiet,
a rotating log file, and a separate history channel that records one JSON
line per training step and per CLI operation.
"""

import json
import logging
import logging.handlers
import os
import platform
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np


class JsonSafeEncoder(json.JSONEncoder):
    """Encodes numpy scalars and arrays that show up in structured log payloads"""

    def default(self, o):
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, Path):
            return str(o)
        return super().default(o)


def to_json(data: Dict[str, Any]) -> str:
    return json.dumps(data, cls=JsonSafeEncoder, sort_keys=True)


class RunLogger:
    """Console, rotating-file and history logging for detector runs"""

    def __init__(self, log_dir: Optional[str] = None):
        self.logger = None
        self.log_dir = Path(log_dir) if log_dir else Path.home() / ".std-detector" / "logs"
        self.history_logger = None

        # Log file settings
        self.max_log_size = 10 * 1024 * 1024  # 10MB
        self.backup_count = 5

    def setup_logging(self, level: int = logging.INFO, quiet: bool = False, verbose: bool = False,
                      to_file: bool = True):
        """Setup logging configuration"""
        if verbose:
            level = logging.DEBUG
        elif quiet:
            level = logging.ERROR

        self.logger = logging.getLogger('std_detector')
        self.logger.setLevel(logging.DEBUG)  # Always capture all levels to file
        self.logger.propagate = False

        self.logger.handlers.clear()

        # Library modules log under src.*; route them through the same handlers
        library_logger = logging.getLogger('src')
        library_logger.setLevel(logging.DEBUG)
        library_logger.handlers.clear()
        library_logger.propagate = False

        console_handler = logging.StreamHandler()
        console_handler.setLevel(level)
        console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
        self.logger.addHandler(console_handler)
        library_logger.addHandler(console_handler)

        if to_file:
            try:
                self.log_dir.mkdir(parents=True, exist_ok=True)
                file_handler = logging.handlers.RotatingFileHandler(
                    self.log_dir / "std-detector.log",
                    maxBytes=self.max_log_size,
                    backupCount=self.backup_count
                )
                file_handler.setLevel(logging.DEBUG)
                file_handler.setFormatter(logging.Formatter(
                    '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
                ))
                self.logger.addHandler(file_handler)
                library_logger.addHandler(file_handler)
                self._setup_history_logging()
            except OSError as e:
                # Read-only home directories still get console logging
                self.logger.warning(f"File logging disabled: {e}")

        self._log_startup_info()

    def _setup_history_logging(self):
        """Setup the per-step / per-operation history channel"""
        self.history_logger = logging.getLogger('std_detector.history')
        self.history_logger.setLevel(logging.INFO)
        self.history_logger.propagate = False
        self.history_logger.handlers.clear()

        history_handler = logging.handlers.RotatingFileHandler(
            self.log_dir / "history.log",
            maxBytes=self.max_log_size,
            backupCount=self.backup_count
        )
        history_handler.setFormatter(logging.Formatter('%(asctime)s - HISTORY - %(message)s'))
        self.history_logger.addHandler(history_handler)

    def _log_startup_info(self):
        """Log system information at startup"""
        startup_info = {
            "event": "cli_startup",
            "platform": platform.system(),
            "python_version": platform.python_version(),
            "numpy_version": np.__version__,
            "working_directory": os.getcwd(),
            "log_directory": str(self.log_dir)
        }
        self.debug("CLI startup", startup_info)

    def debug(self, message: str, extra_data: Dict[str, Any] = None):
        """Log debug message with optional structured data"""
        self._emit(logging.DEBUG, message, extra_data)

    def info(self, message: str, extra_data: Dict[str, Any] = None):
        """Log info message with optional structured data"""
        self._emit(logging.INFO, message, extra_data)

    def warning(self, message: str, extra_data: Dict[str, Any] = None):
        """Log warning message with optional structured data"""
        self._emit(logging.WARNING, message, extra_data)

    def error(self, message: str, extra_data: Dict[str, Any] = None, exc_info: bool = False):
        """Log error message with optional structured data and exception info"""
        self._emit(logging.ERROR, message, extra_data, exc_info=exc_info)

    def _emit(self, level: int, message: str, extra_data: Optional[Dict[str, Any]], exc_info: bool = False):
        if not self.logger:
            return
        if extra_data:
            message = f"{message} | Data: {to_json(extra_data)}"
        self.logger.log(level, message, exc_info=exc_info)

    def history(self, event: str, details: Dict[str, Any] = None):
        """Record a history event (training step, operation outcome)"""
        if not self.history_logger:
            return
        self.history_logger.info(to_json({"event": event, "details": details}))

    def log_operation(self, operation: str, success: bool = True, details: Dict[str, Any] = None):
        """Log a CLI operation with a history entry"""
        status = "SUCCESS" if success else "FAILED"
        level_method = self.info if success else self.error
        level_method(f"Operation {operation} {status}", details)
        self.history(f"operation_{operation.lower().replace(' ', '_')}",
                     {"operation": operation, "success": success, "details": details,
                      "finished_at": datetime.now().isoformat()})


def history_step_recorder(step: int, components: Dict[str, float]) -> None:
    """Module-level hook used by the trainer; no-op when history logging is not configured"""
    logger = logging.getLogger('std_detector.history')
    if logger.handlers:
        logger.info(to_json({"event": "train_step", "details": dict(components, step=step)}))
