"""
SGD with momentum and weight decay, and the poly learning-rate schedule.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from src.core.tensor import Tensor
from src.utils.error_handling import ConfigError, ErrorContext, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimizer, schedule and data settings of a training run"""
    base_lr: float = 0.007
    momentum: float = 0.9
    weight_decay: float = 0.0001
    epochs: int = 1
    poly_power: float = 0.9
    seed: int = 0
    batch_size: int = 1
    max_steps: int = 0            # 0 means epochs * batches_per_epoch
    flip: bool = True
    image_size: int = 640
    synthetic_count: int = 5
    synthetic_size: int = 256
    instances_per_image: int = 2
    checkpoint_every: int = 0     # 0 writes the checkpoint only at the end
    log_every: int = 10


def poly_lr(step: int, total: int, cfg: TrainConfig) -> float:
    """base_lr * (1 - step/total)^power"""
    if total <= 0:
        raise ConfigError("poly_lr needs a positive total step count",
                          ErrorContext(operation="poly_lr", details={"total": total}))
    if not 0 <= step <= total:
        raise ConfigError(f"poly_lr step {step} outside [0, {total}]", ErrorContext(operation="poly_lr"))
    return cfg.base_lr * (1.0 - step / total) ** cfg.poly_power


class SGD:
    """
    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

    Parameters listed in `no_decay` skip the weight-decay term.
    """

    def __init__(self, params: Dict[str, Tensor], cfg: TrainConfig, no_decay: Optional[set] = None):
        self.params = params
        self.cfg = cfg
        self.no_decay = set(no_decay or ())
        self.velocity: Dict[str, np.ndarray] = {name: np.zeros_like(t.data) for name, t in params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def step(self, lr: float) -> None:
        sgd_step(self.params, self.velocity, lr, self.cfg, self.no_decay)


def sgd_step(params: Dict[str, Tensor], velocity: Dict[str, np.ndarray], lr: float, cfg: TrainConfig,
             no_decay: Optional[set] = None) -> None:
    """One in-place update of every parameter; all gradients are checked before any is applied"""
    no_decay = no_decay or set()
    bad = [name for name, t in params.items() if t.grad is not None and not np.all(np.isfinite(t.grad))]
    if bad:
        raise NumericalError(f"Non-finite gradients in {len(bad)} parameter(s): {', '.join(bad[:5])}",
                             ErrorContext(operation="sgd_step", details={"parameters": bad}))

    for name, t in params.items():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        update = grad + (0.0 if name in no_decay else cfg.weight_decay) * t.data
        v = velocity[name]
        v *= cfg.momentum
        v += update
        t.data -= lr * v
