"""
Polygon primitives: validation, orientation, area/perimeter, offsetting
and pixel-center rasterization.

Vertices are (x, y) in image pixel coordinates. The canonical orientation
is the one with positive shoelace area.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import pyclipper
from shapely.geometry import Polygon as ShapelyPolygon

from src.utils.error_handling import ErrorContext, GeometryError

logger = logging.getLogger(__name__)

# Fixed-point scale for the clipping library
CLIPPER_SCALE = 2 ** 24
MITER_LIMIT = 2.0
ARC_TOLERANCE_PX = 0.01
MIN_AREA = 1e-9

PointsLike = Union[np.ndarray, Sequence[Sequence[float]]]


def signed_area(vertices: np.ndarray) -> float:
    """Shoelace formula"""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def perimeter_of(vertices: np.ndarray) -> float:
    return float(np.linalg.norm(np.roll(vertices, -1, axis=0) - vertices, axis=1).sum())


def _clean(points: PointsLike) -> np.ndarray:
    vertices = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(vertices) > 1 and np.array_equal(vertices[0], vertices[-1]):
        vertices = vertices[:-1]
    if len(vertices) == 0:
        return vertices
    keep = np.ones(len(vertices), dtype=bool)
    keep[1:] = np.any(vertices[1:] != vertices[:-1], axis=1)
    return vertices[keep]


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with positive area in canonical orientation"""
    vertices: np.ndarray

    @classmethod
    def from_points(cls, points: PointsLike, validate: bool = True) -> "Polygon":
        vertices = _clean(points)
        context = ErrorContext(operation="polygon", details={"vertices": vertices.tolist()[:8]})
        if len(vertices) < 3:
            raise GeometryError(f"Polygon needs at least 3 distinct points, got {len(vertices)}", context)
        if not np.all(np.isfinite(vertices)):
            raise GeometryError("Polygon has non-finite coordinates", context)
        area = signed_area(vertices)
        if abs(area) <= MIN_AREA:
            raise GeometryError("Polygon has zero area", context)
        if validate and not ShapelyPolygon(vertices).is_valid:
            raise GeometryError("Polygon is self-intersecting", context)
        if area < 0:
            vertices = vertices[::-1].copy()
        vertices.setflags(write=False)
        return cls(vertices)

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "Polygon":
        return cls.from_points([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    @property
    def perimeter(self) -> float:
        return perimeter_of(self.vertices)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        (x0, y0), (x1, y1) = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(x0), float(y0), float(x1), float(y1)

    def to_shapely(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.vertices)

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon.from_points(self.vertices + np.array([dx, dy]), validate=False)

    def scaled(self, sx: float, sy: float) -> "Polygon":
        return Polygon.from_points(self.vertices * np.array([sx, sy]), validate=False)

    def flat(self) -> List[float]:
        return [float(v) for v in self.vertices.reshape(-1)]

    def __len__(self) -> int:
        return len(self.vertices)


def shrink_distance(poly: Polygon, gamma: float) -> float:
    """A * (1 - gamma^2) / P"""
    if not 0.0 < gamma < 1.0:
        raise GeometryError(f"Shrink factor must be in (0, 1), got {gamma}",
                            ErrorContext(operation="shrink_distance"))
    area, perimeter = poly.area, poly.perimeter
    if area <= MIN_AREA or perimeter <= 0.0:
        raise GeometryError("Cannot shrink a degenerate polygon", ErrorContext(operation="shrink_distance"))
    return area * (1.0 - gamma * gamma) / perimeter


def expansion_distance(poly: Polygon, beta: float) -> float:
    """A * beta / P"""
    area, perimeter = poly.area, poly.perimeter
    if area <= MIN_AREA or perimeter <= 0.0:
        raise GeometryError("Cannot expand a degenerate polygon", ErrorContext(operation="expansion_distance"))
    return area * beta / perimeter


def offset_polygon(poly: Polygon, delta: float) -> List[Polygon]:
    """
    Offset by `delta` pixels: negative shrinks with mitered joins, positive
    expands with round joins. Shrinking may return no polygon (collapsed) or
    several (a concave shape split apart).
    """
    if delta == 0.0:
        return [poly]
    offsetter = pyclipper.PyclipperOffset(miter_limit=MITER_LIMIT, arc_tolerance=ARC_TOLERANCE_PX * CLIPPER_SCALE)
    join = pyclipper.JT_ROUND if delta > 0 else pyclipper.JT_MITER
    offsetter.AddPath(pyclipper.scale_to_clipper(poly.vertices.tolist(), CLIPPER_SCALE), join,
                      pyclipper.ET_CLOSEDPOLYGON)
    solution = offsetter.Execute(delta * CLIPPER_SCALE)

    paths = [np.asarray(pyclipper.scale_from_clipper(path, CLIPPER_SCALE), dtype=np.float64)
             for path in solution if len(path) >= 3]
    if not paths:
        return []
    outer_sign = np.sign(signed_area(max(paths, key=lambda p: abs(signed_area(p)))))

    result = []
    for points in paths:
        # holes come back with the opposite orientation
        if np.sign(signed_area(points)) != outer_sign:
            continue
        try:
            result.append(Polygon.from_points(points, validate=False))
        except GeometryError:
            logger.debug(f"Dropped degenerate offset fragment with {len(points)} points")
    result.sort(key=lambda p: -p.area)
    return result


def rasterize(polys: Iterable[Union[Polygon, np.ndarray]], size: Tuple[int, int]) -> np.ndarray:
    """
    Binary mask of shape `size` = (H, W). Pixel (r, c) is set iff its
    center (c + 0.5, r + 0.5) lies inside any polygon under the even-odd
    rule. Parts outside the image are clipped.
    """
    height, width = size
    mask = np.zeros((height, width), dtype=np.uint8)
    centers_x = np.arange(width) + 0.5
    for poly in polys:
        vertices = poly.vertices if isinstance(poly, Polygon) else np.asarray(poly, dtype=np.float64).reshape(-1, 2)
        if len(vertices) < 3:
            continue
        x0, y0 = vertices[:, 0], vertices[:, 1]
        x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
        row_start = max(int(np.floor(y0.min() - 0.5)), 0)
        row_stop = min(int(np.ceil(y0.max() + 0.5)), height)
        for row in range(row_start, row_stop):
            y = row + 0.5
            crossing = (y0 > y) != (y1 > y)
            if not crossing.any():
                continue
            xa, ya, xb, yb = x0[crossing], y0[crossing], x1[crossing], y1[crossing]
            xs = np.sort(xa + (y - ya) * (xb - xa) / (yb - ya))
            # crossings strictly to the right of each center
            right = xs.size - np.searchsorted(xs, centers_x, side="right")
            mask[row] |= (right % 2 == 1).astype(np.uint8)
    return mask


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a, b = a.astype(bool), b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)
