"""
Region labeling and outer-boundary extraction.

Boundaries follow pixel cracks: the polygon runs along pixel corners, so a
single pixel becomes the unit square around it and the polygon's
pixel-center rasterization reproduces the region exactly.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import cv2
import numpy as np
from shapely.geometry import MultiPolygon
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.validation import make_valid

from src.geometry.polygon import Polygon
from src.utils.error_handling import ErrorContext, GeometryError

logger = logging.getLogger(__name__)


@dataclass
class Region:
    """One 4-connected foreground component"""
    label: int
    area: int
    x: int
    y: int
    mask: np.ndarray        # bool crop of the bounding box

    @property
    def bbox(self) -> Tuple[int, int, int, int]:
        return self.x, self.y, self.mask.shape[1], self.mask.shape[0]

    def full_mask(self, shape: Tuple[int, int]) -> np.ndarray:
        full = np.zeros(shape, dtype=bool)
        h, w = self.mask.shape
        full[self.y:self.y + h, self.x:self.x + w] = self.mask
        return full


def label_regions(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """4-connected labels (0 is background) and the label count"""
    count, labels = cv2.connectedComponents(mask.astype(np.uint8), connectivity=4)
    return labels, count - 1


def connected_components(mask: np.ndarray, min_area: int) -> List[Region]:
    """4-connected regions of a binary mask with at least `min_area` pixels, in label order"""
    count, labels, stats, _ = cv2.connectedComponentsWithStats(mask.astype(np.uint8), connectivity=4)
    regions = []
    for label in range(1, count):
        x, y, w, h, area = (int(v) for v in stats[label, :5])
        if area < min_area:
            continue
        crop = labels[y:y + h, x:x + w] == label
        regions.append(Region(label=label, area=area, x=x, y=y, mask=crop))
    return regions


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Fill background pockets that are not 4-connected to the outside"""
    padded = np.pad(mask.astype(bool), 1)
    _, background = cv2.connectedComponents((~padded).astype(np.uint8), connectivity=4)
    outside = background[0, 0]
    return (background != outside)[1:-1, 1:-1]


def trace_outer_boundary(mask: np.ndarray) -> np.ndarray:
    """
    Corner coordinates (x, y) of the outer crack boundary of a hole-free
    4-connected region, with collinear corners removed.
    """
    padded = np.pad(mask.astype(bool), 1)
    rows, cols = np.nonzero(padded[1:-1, 1:-1])
    rows, cols = rows + 1, cols + 1

    # Each exposed side contributes one directed edge; pixels are walked
    # top, right, bottom, left so all boundary edges chain head to tail.
    nxt: Dict[Tuple[int, int], Tuple[int, int]] = {}
    sides = (
        (~padded[rows - 1, cols], (0, 0), (1, 0)),
        (~padded[rows, cols + 1], (1, 0), (1, 1)),
        (~padded[rows + 1, cols], (1, 1), (0, 1)),
        (~padded[rows, cols - 1], (0, 1), (0, 0)),
    )
    for exposed, (sx, sy), (ex, ey) in sides:
        for r, c in zip(rows[exposed], cols[exposed]):
            # corners in unpadded coordinates
            nxt[(int(c - 1 + sx), int(r - 1 + sy))] = (int(c - 1 + ex), int(r - 1 + ey))

    if not nxt:
        return np.zeros((0, 2))

    # Start from the top-left corner so the trace is deterministic
    start = min(nxt, key=lambda p: (p[1], p[0]))
    loop = [start]
    current = nxt[start]
    while current != start:
        loop.append(current)
        current = nxt[current]
        if len(loop) > len(nxt):
            raise GeometryError("Boundary trace did not close", ErrorContext(operation="extract_contour"))

    points = np.array(loop, dtype=np.float64)
    before = np.roll(points, 1, axis=0)
    after = np.roll(points, -1, axis=0)
    cross = (points[:, 0] - before[:, 0]) * (after[:, 1] - points[:, 1]) - \
            (points[:, 1] - before[:, 1]) * (after[:, 0] - points[:, 0])
    return points[cross != 0]


def _largest_valid(points: np.ndarray) -> np.ndarray:
    geometry = make_valid(ShapelyPolygon(points))
    candidates = []
    if isinstance(geometry, ShapelyPolygon):
        candidates = [geometry]
    elif isinstance(geometry, MultiPolygon):
        candidates = list(geometry.geoms)
    elif hasattr(geometry, "geoms"):
        candidates = [g for g in geometry.geoms if isinstance(g, ShapelyPolygon)]
    candidates = [g for g in candidates if g.area > 0]
    if not candidates:
        return points
    largest = max(candidates, key=lambda g: g.area)
    return np.asarray(largest.exterior.coords, dtype=np.float64)[:-1]


def extract_contour(region: Region, epsilon: float = 0.5) -> Polygon:
    """
    Outer boundary polygon of a region in image pixel coordinates,
    simplified with Douglas-Peucker at `epsilon` pixels.
    """
    boundary = trace_outer_boundary(fill_holes(region.mask))
    if len(boundary) < 4:
        raise GeometryError(f"Region {region.label} has no traceable boundary",
                            ErrorContext(operation="extract_contour", details={"area": region.area}))
    boundary = boundary + np.array([region.x, region.y], dtype=np.float64)

    simplified = boundary
    if epsilon > 0:
        approx = cv2.approxPolyDP(boundary.astype(np.float32).reshape(-1, 1, 2), epsilon, True)
        approx = approx.reshape(-1, 2).astype(np.float64)
        if len(approx) >= 3:
            simplified = approx

    if not ShapelyPolygon(simplified).is_valid:
        simplified = _largest_valid(simplified)
    try:
        return Polygon.from_points(simplified)
    except GeometryError:
        # Simplification collapsed the shape; the raw crack boundary is always valid
        return Polygon.from_points(boundary)
