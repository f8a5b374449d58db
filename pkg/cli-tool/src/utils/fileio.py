"""
Atomic file writes.

Outputs are written to a temporary file in the destination directory and
moved into place with os.replace, so readers never see a partial file.
"""

import os
import tempfile
from pathlib import Path
from typing import Union

from src.utils.error_handling import DetectorIOError, ErrorContext

PathLike = Union[str, os.PathLike]


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write bytes to path atomically and return the final path"""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=str(target.parent))
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, target)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        raise DetectorIOError(f"Failed to write {target}: {e}", path=str(target),
                              context=ErrorContext(operation="atomic_write"), cause=e)
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write UTF-8 text to path atomically"""
    return atomic_write_bytes(path, text.encode("utf-8"))


def read_bytes(path: PathLike) -> bytes:
    """Read a whole file, mapping OS failures to DetectorIOError"""
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DetectorIOError(f"Cannot read {path}: {e}", path=str(path),
                              context=ErrorContext(operation="read_file"), cause=e)
