"""
Resize, pad and normalize images into network input tensors, and map
detections back to original image coordinates.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import cv2
import numpy as np

from src.core.tensor import Tensor, default_dtype
from src.geometry.polygon import Polygon
from src.imageio.netpbm import Image
from src.utils.error_handling import ConfigError, ErrorContext

logger = logging.getLogger(__name__)

SIZE_DIVISOR = 32


def round_up(value: int, divisor: int = SIZE_DIVISOR) -> int:
    return int(math.ceil(value / divisor) * divisor)


@dataclass(frozen=True)
class ResizePlan:
    """Original size, resized content size and the zero padding around it"""
    original: Tuple[int, int]    # (H, W)
    resized: Tuple[int, int]
    padded: Tuple[int, int]
    pad_top: int
    pad_left: int

    @property
    def scale(self) -> Tuple[float, float]:
        """(sx, sy) from original to resized pixels"""
        return self.resized[1] / self.original[1], self.resized[0] / self.original[0]

    def to_original(self, poly: Polygon) -> Polygon:
        """Un-pad, un-scale and clip a polygon given in network-input coordinates"""
        sx, sy = self.scale
        points = (poly.vertices - np.array([self.pad_left, self.pad_top])) / np.array([sx, sy])
        height, width = self.original
        points = np.clip(points, [0.0, 0.0], [float(width), float(height)])
        return Polygon.from_points(points, validate=False)

    def to_input(self, poly: Polygon) -> Polygon:
        sx, sy = self.scale
        return poly.scaled(sx, sy).translated(self.pad_left, self.pad_top)

    def to_dict(self) -> dict:
        return {"original": list(self.original), "resized": list(self.resized), "padded": list(self.padded),
                "pad_top": self.pad_top, "pad_left": self.pad_left}


def plan_resize(height: int, width: int, short_side: int = 0, fixed_size: Optional[int] = None) -> ResizePlan:
    """
    Three modes:
      fixed_size: stretch to fixed_size x fixed_size (training)
      short_side > 0: scale so the short side equals short_side, aspect preserved
      otherwise: keep the native size

    The resized content is then zero-padded symmetrically up to the next
    multiple of 32 on each axis.
    """
    context = ErrorContext(operation="plan_resize", details={"height": height, "width": width})
    if height <= 0 or width <= 0:
        raise ConfigError(f"Cannot resize an empty image ({width}x{height})", context)
    if fixed_size is not None:
        if fixed_size <= 0:
            raise ConfigError(f"Target size must be positive, got {fixed_size}", context)
        resized = (fixed_size, fixed_size)
    elif short_side < 0:
        raise ConfigError(f"Short side must be non-negative, got {short_side}", context)
    elif short_side > 0:
        scale = short_side / min(height, width)
        resized = (max(int(round(height * scale)), 1), max(int(round(width * scale)), 1))
    else:
        resized = (height, width)

    padded = (round_up(resized[0]), round_up(resized[1]))
    return ResizePlan(original=(height, width), resized=resized, padded=padded,
                      pad_top=(padded[0] - resized[0]) // 2, pad_left=(padded[1] - resized[1]) // 2)


def resize_samples(samples: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W, C) array to (h, w, C)"""
    height, width = size
    if samples.shape[:2] == (height, width):
        return samples
    resized = cv2.resize(samples, (width, height), interpolation=cv2.INTER_LINEAR)
    if resized.ndim == 2:
        resized = resized[:, :, None]
    return resized


def normalize(samples: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    """(H, W, 3) uint8 or float samples -> (3, H, W) standardized values"""
    scaled = samples.astype(np.float64) / 255.0
    standardized = (scaled - np.asarray(mean, dtype=np.float64)) / np.asarray(std, dtype=np.float64)
    return standardized.transpose(2, 0, 1)


def to_tensor(image: Image, plan: ResizePlan, mean: Sequence[float], std: Sequence[float]) -> Tensor:
    """
    Network input (1, 3, H, W): bilinear resize, scale to [0, 1],
    per-channel normalization, then zero padding per the plan.
    """
    if (image.height, image.width) != plan.original:
        raise ConfigError(f"Resize plan made for {plan.original}, image is {(image.height, image.width)}",
                          ErrorContext(operation="to_tensor"))
    resized = resize_samples(image.rgb(), plan.resized)
    data = np.zeros((1, 3) + plan.padded, dtype=default_dtype())
    top, left = plan.pad_top, plan.pad_left
    data[0, :, top:top + plan.resized[0], left:left + plan.resized[1]] = normalize(resized, mean, std)
    return Tensor(data)


def image_to_input(image: Image, mean: Sequence[float], std: Sequence[float], short_side: int = 0,
                   fixed_size: Optional[int] = None) -> Tuple[Tensor, ResizePlan]:
    plan = plan_resize(image.height, image.width, short_side=short_side, fixed_size=fixed_size)
    logger.debug(f"Network input {plan.padded[1]}x{plan.padded[0]} for {image.width}x{image.height} image")
    return to_tensor(image, plan, mean, std), plan
