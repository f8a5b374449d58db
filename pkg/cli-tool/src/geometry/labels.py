"""
Text-kernel label generation.

Each text polygon is shrunk inward by S = A(1 - gamma^2)/P and the union
of the shrunk polygons is rasterized as the kernel mask. Don't-care
instances are rasterized at full size into a separate ignore mask.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.geometry.polygon import Polygon, offset_polygon, rasterize, shrink_distance

logger = logging.getLogger(__name__)


@dataclass
class KernelLabel:
    """Kernel mask plus the per-instance shrink results"""
    mask: np.ndarray                                   # (H, W) uint8 kernel union
    ignore: np.ndarray                                 # (H, W) uint8 don't-care raster
    shrunk: List[List[Polygon]] = field(default_factory=list)
    distances: List[float] = field(default_factory=list)
    collapsed: List[int] = field(default_factory=list)

    @property
    def instance_count(self) -> int:
        return len(self.distances)

    def summary(self) -> dict:
        return {
            "instances": self.instance_count,
            "collapsed": len(self.collapsed),
            "collapsed_indices": list(self.collapsed),
            "kernel_pixels": int(self.mask.sum()),
            "ignore_pixels": int(self.ignore.sum()),
        }


def shrink_polygon(poly: Polygon, gamma: float) -> Tuple[float, List[Polygon]]:
    """(shrink distance, kernel polygons); an empty list means the instance collapsed"""
    distance = shrink_distance(poly, gamma)
    return distance, offset_polygon(poly, -distance)


def make_kernel_label(polys: Sequence[Polygon], gamma: float, size: Tuple[int, int],
                      dont_care: Optional[Sequence[Union[Polygon, np.ndarray]]] = None) -> KernelLabel:
    """
    Args:
        polys: text instances
        gamma: shrink factor in (0, 1)
        size: (H, W) of the label
        dont_care: regions excluded from the loss
    """
    shrunk, distances, collapsed = [], [], []
    for index, poly in enumerate(polys):
        distance, kernels = shrink_polygon(poly, gamma)
        distances.append(distance)
        shrunk.append(kernels)
        if not kernels:
            collapsed.append(index)
            logger.info(f"Kernel of instance {index} collapsed (shrink {distance:.2f}px, bounds {poly.bounds})")

    mask = rasterize([k for kernels in shrunk for k in kernels], size)
    ignore = rasterize(list(dont_care or []), size)
    return KernelLabel(mask=mask, ignore=ignore, shrunk=shrunk, distances=distances, collapsed=collapsed)


def stack_labels(labels: Sequence[KernelLabel]) -> Tuple[np.ndarray, np.ndarray]:
    """(N,1,H,W) kernel and ignore arrays for a batch"""
    kernel = np.stack([label.mask for label in labels])[:, None].astype(np.float64)
    ignore = np.stack([label.ignore for label in labels])[:, None].astype(np.float64)
    return kernel, ignore
