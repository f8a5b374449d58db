"""
Inference post-processing: binarize the refined mask, drop tiny regions,
trace kernel contours and expand them back to text size by
O = A * beta / P.
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from src.geometry.polygon import Polygon, expansion_distance, offset_polygon
from src.postprocess.contours import Region, connected_components, extract_contour
from src.utils.error_handling import ConfigError, ErrorContext, GeometryError, require_shape

logger = logging.getLogger(__name__)


@dataclass
class PostprocessParams:
    threshold: float = 0.5
    min_area: int = 16
    beta: float = 1.5
    simplify_epsilon: float = 0.5

    @classmethod
    def from_config(cls, config) -> "PostprocessParams":
        """Build from a RunConfig (model.threshold/min_area/beta, post.simplify_epsilon)"""
        return cls(threshold=config.model.threshold, min_area=config.model.min_area,
                   beta=config.model.beta, simplify_epsilon=config.post.simplify_epsilon)


@dataclass
class Detection:
    polygon: Polygon
    score: float
    kernel: Polygon = None

    def to_dict(self) -> dict:
        return {"score": self.score, "points": self.polygon.vertices.tolist()}


def binarize(prob: np.ndarray, threshold: float) -> np.ndarray:
    """1 where probability > threshold (strict)"""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"Binarization threshold must be in (0, 1), got {threshold}",
                          ErrorContext(operation="binarize"))
    return (prob > threshold).astype(np.uint8)


def expand_kernel(kernel: Polygon, beta: float) -> Polygon:
    """Outward offset by A * beta / P; the largest piece if the offset splits"""
    distance = expansion_distance(kernel, beta)
    if distance == 0.0:
        return kernel
    pieces = offset_polygon(kernel, distance)
    if not pieces:
        raise GeometryError("Kernel expansion produced no polygon", ErrorContext(operation="expand_kernel"))
    return pieces[0]


def region_score(prob: np.ndarray, region: Region) -> float:
    h, w = region.mask.shape
    window = prob[region.y:region.y + h, region.x:region.x + w]
    return float(np.clip(window[region.mask].mean(), 0.0, 1.0))


def detect(prob: np.ndarray, params: PostprocessParams) -> List[Detection]:
    """
    Args:
        prob: (H, W) probability map (a full-resolution mask)
        params: threshold, min_area, beta, simplify_epsilon

    Returns:
        detections sorted by descending score
    """
    require_shape(prob.ndim == 2, f"detect expects an (H, W) map, got {prob.shape}", "detect")
    binary = binarize(prob, params.threshold)
    detections = []
    for region in connected_components(binary, params.min_area):
        try:
            kernel = extract_contour(region, params.simplify_epsilon)
            polygon = expand_kernel(kernel, params.beta)
        except GeometryError as e:
            logger.debug(f"Skipped region {region.label}: {e.message}")
            continue
        detections.append(Detection(polygon=polygon, score=region_score(prob, region), kernel=kernel))

    # stable sort keeps label order among equal scores
    detections.sort(key=lambda d: -d.score)
    return detections
