"""
Detection overlays: polygon outlines drawn onto a copy of the input image.
"""

from typing import Iterable, Sequence, Union

import cv2
import numpy as np

from src.geometry.polygon import Polygon
from src.imageio.netpbm import Image

DEFAULT_COLOR = (0, 255, 0)


def _points(item) -> np.ndarray:
    if hasattr(item, "polygon"):
        item = item.polygon
    vertices = item.vertices if isinstance(item, Polygon) else np.asarray(item, dtype=np.float64).reshape(-1, 2)
    return np.round(vertices).astype(np.int32)


def draw_overlay(image: Image, detections: Iterable[Union[Polygon, np.ndarray, object]],
                 color: Sequence[int] = DEFAULT_COLOR) -> Image:
    """
    Outline every detection with 1-pixel 8-connected (Bresenham) lines.

    Accepts Detection objects, Polygons or (N, 2) point arrays. With at
    least one detection the result is RGB; with none it is an unchanged
    copy (grayscale stays grayscale). The input image is not modified.
    Vertices outside the image are clipped by the line rasterizer.
    """
    detections = list(detections)
    if not detections:
        return image.copy()
    canvas = np.ascontiguousarray(image.rgb().copy())
    color = tuple(int(c) for c in color)
    for item in detections:
        cv2.polylines(canvas, [_points(item).reshape(-1, 1, 2)], True, color, thickness=1, lineType=cv2.LINE_8)
    return Image(canvas)
