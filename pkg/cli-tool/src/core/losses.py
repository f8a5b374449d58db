"""
Segmentation losses for the coarse and refined kernel masks.

bce_ohem   balanced BCE over all positives plus the hardest negatives
dice_loss  1 - smoothed dice coefficient over non-ignored pixels
total_loss weighted dual supervision of both masks
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.core import functional as F
from src.core.tensor import Function, Tensor
from src.utils.error_handling import ConfigError, ErrorContext, NumericalError, require_shape

logger = logging.getLogger(__name__)

CLAMP_EPS = 1e-7
DICE_SMOOTH = 1.0
EMPTY_TOPK = 1000
LOSS_KINDS = ("BCE", "DICE")


@dataclass
class LossConfig:
    """Weights and pairing of the two mask losses"""
    lambda1: float = 6.0
    lambda2: float = 1.0
    coarse_loss: str = "BCE"
    refined_loss: str = "BCE"
    ohem_ratio: float = 3.0

    def validate(self) -> None:
        for key in ("coarse_loss", "refined_loss"):
            value = getattr(self, key)
            if value not in LOSS_KINDS:
                raise ConfigError(f"loss.{key} must be one of {LOSS_KINDS}, got {value!r}",
                                  ErrorContext(operation="loss_config"))
        if self.ohem_ratio <= 0:
            raise ConfigError(f"loss.ohem_ratio must be positive, got {self.ohem_ratio}",
                              ErrorContext(operation="loss_config"))
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss.lambda1 and loss.lambda2 must be non-negative",
                              ErrorContext(operation="loss_config"))


def ohem_selection(pixel_loss: np.ndarray, positive: np.ndarray, valid: np.ndarray, ratio: float,
                   empty_topk: int = EMPTY_TOPK) -> np.ndarray:
    """
    Boolean selection for one image: every valid positive plus the
    ratio*|positives| highest-loss valid negatives. Equal losses keep the
    lower flat index first.
    """
    flat_loss = pixel_loss.reshape(-1)
    flat_pos = (positive & valid).reshape(-1)
    flat_neg = (~positive & valid).reshape(-1)

    n_pos = int(flat_pos.sum())
    neg_index = np.flatnonzero(flat_neg)
    if n_pos > 0:
        k = min(int(ratio * n_pos), neg_index.size)
    else:
        k = min(int(valid.sum()), empty_topk, neg_index.size)

    selected = flat_pos.copy()
    if k > 0:
        order = np.argsort(-flat_loss[neg_index], kind="stable")
        selected[neg_index[order[:k]]] = True
    return selected.reshape(pixel_loss.shape)


class BCEOHEM(Function):
    def forward(self, pred: np.ndarray, *, target: np.ndarray, ignore: np.ndarray, ratio: float) -> np.ndarray:
        if np.any(pred < 0.0) or np.any(pred > 1.0):
            raise NumericalError("bce_ohem prediction outside [0, 1]", ErrorContext(operation="bce_ohem"))
        clamped = np.clip(pred, CLAMP_EPS, 1.0 - CLAMP_EPS)
        positive = target > 0.5
        pixel_loss = -np.where(positive, np.log(clamped), np.log(1.0 - clamped))

        valid = ignore <= 0.5
        selected = np.zeros(pred.shape, dtype=bool)
        for n in range(pred.shape[0]):
            selected[n, 0] = ohem_selection(pixel_loss[n, 0], positive[n, 0], valid[n, 0], ratio)

        count = int(selected.sum())
        self.selected = selected
        self.count = count
        self.clamped = clamped
        self.positive = positive
        self.inside = (pred > CLAMP_EPS) & (pred < 1.0 - CLAMP_EPS)
        total = pixel_loss[selected].sum() / count if count else 0.0
        return np.full((1, 1, 1, 1), total, dtype=pred.dtype)

    def backward(self, grad: np.ndarray):
        if self.count == 0:
            return (np.zeros_like(self.clamped),)
        d_pixel = np.where(self.positive, -1.0 / self.clamped, 1.0 / (1.0 - self.clamped))
        d_pred = d_pixel * (self.selected & self.inside) / self.count
        return ((d_pred * grad.reshape(())).astype(self.clamped.dtype),)


class DiceLoss(Function):
    def forward(self, pred: np.ndarray, *, target: np.ndarray, ignore: np.ndarray, smooth: float) -> np.ndarray:
        valid = (ignore <= 0.5).astype(pred.dtype)
        x = pred * valid
        y = target.astype(pred.dtype) * valid
        axes = (1, 2, 3)
        intersection = (x * y).sum(axis=axes)
        denominator = (x * x).sum(axis=axes) + (y * y).sum(axis=axes) + smooth
        numerator = 2.0 * intersection + smooth
        coefficient = numerator / denominator

        self.x, self.y, self.valid = x, y, valid
        self.numerator, self.denominator = numerator, denominator
        return np.full((1, 1, 1, 1), (1.0 - coefficient).mean(), dtype=pred.dtype)

    def backward(self, grad: np.ndarray):
        batch = self.x.shape[0]
        num = self.numerator.reshape(-1, 1, 1, 1)
        den = self.denominator.reshape(-1, 1, 1, 1)
        d_coefficient = (2.0 * self.y * den - num * 2.0 * self.x) / (den * den)
        d_pred = -d_coefficient * self.valid / batch
        return ((d_pred * grad.reshape(())).astype(self.x.dtype),)


def _check_mask_args(pred: Tensor, target: np.ndarray, ignore: Optional[np.ndarray], operation: str) -> np.ndarray:
    require_shape(pred.data.ndim == 4 and pred.shape[1] == 1, f"{operation} expects (N,1,H,W), got {pred.shape}",
                  operation)
    require_shape(target.shape == pred.shape, f"{operation} target {target.shape} != pred {pred.shape}", operation)
    if ignore is None:
        return np.zeros(pred.shape, dtype=pred.data.dtype)
    require_shape(ignore.shape == pred.shape, f"{operation} ignore {ignore.shape} != pred {pred.shape}", operation)
    return ignore


def bce_ohem(pred: Tensor, target: np.ndarray, ignore: Optional[np.ndarray] = None, ratio: float = 3.0) -> Tensor:
    ignore = _check_mask_args(pred, target, ignore, "bce_ohem")
    return BCEOHEM.apply(pred, target=target, ignore=ignore, ratio=ratio)


def dice_loss(pred: Tensor, target: np.ndarray, ignore: Optional[np.ndarray] = None,
              smooth: float = DICE_SMOOTH) -> Tensor:
    ignore = _check_mask_args(pred, target, ignore, "dice_loss")
    return DiceLoss.apply(pred, target=target, ignore=ignore, smooth=smooth)


def mask_loss(kind: str, pred: Tensor, target: np.ndarray, ignore: Optional[np.ndarray], cfg: LossConfig) -> Tensor:
    if kind == "BCE":
        return bce_ohem(pred, target, ignore, cfg.ohem_ratio)
    if kind == "DICE":
        return dice_loss(pred, target, ignore)
    raise ConfigError(f"Unknown loss kind {kind!r}", ErrorContext(operation="mask_loss"))


@dataclass
class LossBreakdown:
    """Total loss tensor plus the component values for logging"""
    total: Tensor
    coarse: float
    refined: Optional[float]

    def to_dict(self) -> dict:
        return {"total": float(self.total.data.sum()), "coarse": self.coarse, "refined": self.refined}


def total_loss(coarse_mask: Tensor, refined_mask: Optional[Tensor], kernel: np.ndarray,
               ignore: Optional[np.ndarray], cfg: LossConfig) -> LossBreakdown:
    """
    lambda1 * L(coarse upsampled x4) + lambda2 * L(refined).

    Args:
        coarse_mask: (N,1,H/4,W/4) probabilities
        refined_mask: (N,1,H,W) probabilities, or None when the refined branch is disabled
        kernel: (N,1,H,W) binary kernel label
        ignore: (N,1,H,W) don't-care mask or None
    """
    require_shape(coarse_mask.shape[2] * 4 == kernel.shape[2] and coarse_mask.shape[3] * 4 == kernel.shape[3],
                  f"coarse mask {coarse_mask.shape} is not a quarter of the label {kernel.shape}", "total_loss")
    coarse_full = F.upsample_nearest(coarse_mask, 4)
    coarse_term = mask_loss(cfg.coarse_loss, coarse_full, kernel, ignore, cfg)
    total = F.scale(coarse_term, cfg.lambda1)
    refined_value = None

    if refined_mask is not None:
        require_shape(refined_mask.shape == kernel.shape,
                      f"refined mask {refined_mask.shape} != label {kernel.shape}", "total_loss")
        refined_term = mask_loss(cfg.refined_loss, refined_mask, kernel, ignore, cfg)
        total = F.add(total, F.scale(refined_term, cfg.lambda2))
        refined_value = float(refined_term.data.sum())

    return LossBreakdown(total=total, coarse=float(coarse_term.data.sum()), refined=refined_value)
