"""
Binary Netpbm images: PGM (P5, grayscale) and PPM (P6, RGB), 8-bit.
PNG is available through OpenCV when enabled.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from src.utils.error_handling import ErrorContext, ImageFormatError
from src.utils.fileio import atomic_write_bytes, read_bytes

logger = logging.getLogger(__name__)

MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}
WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass
class Image:
    """8-bit samples, row-major, channels interleaved: data has shape (H, W, C)"""
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3 or self.data.shape[2] not in (1, 3):
            raise ImageFormatError(f"Image data must be (H, W, 1|3), got {self.data.shape}",
                                   context=ErrorContext(operation="image"))
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def rgb(self) -> np.ndarray:
        """(H, W, 3) view, replicating grayscale"""
        return self.data if self.channels == 3 else np.repeat(self.data, 3, axis=2)

    def copy(self) -> "Image":
        return Image(self.data.copy())


def _header_fields(blob: bytes, count: int, source: str):
    """Read `count` whitespace-separated header tokens, skipping # comments"""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and (blob[pos:pos + 1] in (b" ", b"\t", b"\n", b"\r", b"\x0b", b"\x0c")
                                   or blob[pos:pos + 1] == b"#"):
            if blob[pos:pos + 1] == b"#":
                end = blob.find(b"\n", pos)
                pos = len(blob) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(blob) and blob[pos] not in WHITESPACE and blob[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{source}: truncated Netpbm header", path=source,
                                   context=ErrorContext(operation="read_image"))
        tokens.append(blob[start:pos])
    return tokens, pos


def decode_netpbm(blob: bytes, source: str = "<memory>") -> Image:
    context = ErrorContext(operation="read_image", path=source)
    (magic, width_text, height_text, maxval_text), pos = _header_fields(blob, 4, source)
    if magic not in MAGIC_CHANNELS:
        raise ImageFormatError(f"{source}: unsupported Netpbm magic {magic!r} (need P5 or P6)", context=context)
    try:
        width, height, maxval = int(width_text), int(height_text), int(maxval_text)
    except ValueError:
        raise ImageFormatError(f"{source}: malformed Netpbm header", context=context)
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{source}: invalid size {width}x{height}", context=context)
    if maxval != 255:
        raise ImageFormatError(f"{source}: unsupported max value {maxval} (only 255)", context=context)
    if pos >= len(blob) or blob[pos] not in WHITESPACE:
        raise ImageFormatError(f"{source}: missing whitespace before raster", context=context)
    pos += 1  # exactly one whitespace byte

    channels = MAGIC_CHANNELS[magic]
    expected = width * height * channels
    if len(blob) - pos < expected:
        raise ImageFormatError(f"{source}: truncated raster ({len(blob) - pos} of {expected} bytes)", context=context)
    data = np.frombuffer(blob, dtype=np.uint8, count=expected, offset=pos).reshape(height, width, channels)
    return Image(data.copy())


def encode_netpbm(image: Image) -> bytes:
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + f"\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.data.tobytes()


def read_image(path, enable_png: bool = False) -> Image:
    source = str(path)
    blob = read_bytes(path)
    if Path(path).suffix.lower() == ".png":
        if not enable_png:
            raise ImageFormatError(f"{source}: PNG input is disabled (set io.enable_png=true)", path=source,
                                   context=ErrorContext(operation="read_image"))
        decoded = cv2.imdecode(np.frombuffer(blob, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
        if decoded is None or decoded.dtype != np.uint8:
            raise ImageFormatError(f"{source}: unreadable or non-8-bit PNG", path=source,
                                   context=ErrorContext(operation="read_image"))
        if decoded.ndim == 3:
            decoded = cv2.cvtColor(decoded[:, :, :3], cv2.COLOR_BGR2RGB)
        return Image(decoded)
    return decode_netpbm(blob, source)


def write_image(image: Image, path) -> None:
    atomic_write_bytes(path, encode_netpbm(image))


def write_mask(mask: np.ndarray, path) -> None:
    """Binary mask as a P5 image with 0/255 samples"""
    write_image(Image((mask > 0).astype(np.uint8) * 255), path)


def read_mask(path) -> np.ndarray:
    return (read_image(path).data[:, :, 0] > 127).astype(np.uint8)
