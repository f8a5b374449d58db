"""
Model-to-detections glue: forward pass, mask selection, detection and
mapping back to the source image.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.core.tensor import Tensor, no_grad
from src.imageio.netpbm import Image
from src.imageio.transforms import ResizePlan, image_to_input
from src.model.std_model import StdModel
from src.postprocess.detector import Detection, PostprocessParams, detect
from src.utils.error_handling import ConfigError, ErrorContext, GeometryError

logger = logging.getLogger(__name__)

COARSE_STRIDE = 4


@dataclass
class InferenceResult:
    detections: List[Detection]
    plan: Optional[ResizePlan] = None
    mask: str = "refined"
    alpha: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mask": self.mask, "detections": [d.to_dict() for d in self.detections],
                "plan": self.plan.to_dict() if self.plan else None}


def upsample_coarse(coarse: np.ndarray, stride: int = COARSE_STRIDE) -> np.ndarray:
    """Nearest-neighbour upsampling of an (h, w) map by `stride`"""
    return np.repeat(np.repeat(coarse, stride, axis=0), stride, axis=1)


def select_probability(model: StdModel, image: Tensor, mask: str = "refined") -> np.ndarray:
    """
    Full-resolution (H, W) probability map for the first image of the
    batch. The coarse mask is upsampled; without the refinement branch the
    coarse mask is always used.
    """
    if mask not in ("coarse", "refined"):
        raise ConfigError(f"Unknown mask {mask!r}", ErrorContext(operation="select_probability"))
    model.eval()
    with no_grad():
        out = model(image)
    if mask == "refined" and out.refined is not None:
        return out.refined.data[0, 0]
    if mask == "refined":
        logger.debug("Model has no refinement branch, using the coarse mask")
    return upsample_coarse(out.coarse.data[0, 0])


def detect_from_model(model: StdModel, image: Tensor, params: PostprocessParams,
                      mask: str = "refined") -> List[Detection]:
    """Detections in network-input coordinates"""
    return detect(select_probability(model, image, mask), params)


def map_detections(detections: List[Detection], plan: ResizePlan) -> List[Detection]:
    mapped = []
    for det in detections:
        try:
            polygon = plan.to_original(det.polygon)
        except GeometryError as e:
            # collapsed entirely into the padding
            logger.debug(f"Dropped detection outside the image: {e.message}")
            continue
        mapped.append(Detection(polygon=polygon, score=det.score, kernel=det.kernel))
    return mapped


def infer_image(model: StdModel, image: Image, params: PostprocessParams, mean, std, short_side: int = 0,
                mask: str = "refined") -> InferenceResult:
    """Resize and normalize, run the model, detect, and map back to original coordinates"""
    tensor, plan = image_to_input(image, mean, std, short_side=short_side)
    detections = detect_from_model(model, tensor, params, mask)
    result = InferenceResult(detections=map_detections(detections, plan), plan=plan, mask=mask,
                             alpha=model.alpha_value())
    logger.debug(f"{len(result.detections)} detection(s) at input {plan.padded[1]}x{plan.padded[0]}")
    return result
