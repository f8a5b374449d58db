"""
The full detector graph.

backbone -> MIEM per scale -> FPN fusion -> coarse head -> mapping filter
-> CPFSM -> alpha calibration -> refined head
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from cryptography.hazmat.primitives import hashes

from src.core.tensor import Tensor, default_dtype, precision
from src.model.backbone import Backbone, stage_channels
from src.model.fpn import FPNFusion
from src.model.heads import CoarseHead, RefinedHead
from src.model.layers import Layer, state_of
from src.model.miem import MIEMBlock
from src.model.scm import CPFSM, mapping_filter, scm_calibrate
from src.utils.error_handling import CheckpointError, ErrorContext

logger = logging.getLogger(__name__)

ALPHA_NAME = "alpha"


@dataclass
class ModelConfig:
    """Network widths and the inference constants of the model section"""
    base_channels: int = 16
    fpn_width: int = 64
    fused_width: int = 64
    cpfsm_width: int = 64
    gamma: float = 0.4
    beta: float = 1.5
    threshold: float = 0.5
    min_area: int = 16
    precision: int = 64
    use_miem: bool = True
    use_scm: bool = True
    alpha_init: float = -1.0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5


@dataclass
class ForwardOutput:
    """Both masks plus the intermediate maps worth inspecting"""
    coarse: Tensor
    refined: Optional[Tensor]
    features: Dict[str, Tensor] = field(default_factory=dict)


class StdModel(Layer):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        bn = dict(bn_momentum=config.bn_momentum, bn_eps=config.bn_eps)

        with precision(config.precision):
            self.dtype = default_dtype()
            self.backbone = self.add_child("backbone", Backbone(config.base_channels, rng, **bn))
            channels = stage_channels(config.base_channels)
            self.miem = []
            if config.use_miem:
                self.miem = [self.add_child(f"miem{i}", MIEMBlock(c, rng, **bn)) for i, c in enumerate(channels, 1)]
            self.fpn = self.add_child("fpn", FPNFusion(channels, config.fpn_width, config.fused_width, rng))
            self.coarse_head = self.add_child("coarse_head", CoarseHead(config.fused_width, rng, **bn))
            self.cpfsm = None
            self.refined_head = None
            self.alpha = None
            if config.use_scm:
                self.cpfsm = self.add_child("cpfsm", CPFSM(config.fused_width, config.cpfsm_width, rng))
                self.refined_head = self.add_child("refined_head", RefinedHead(config.fused_width, rng, **bn))
                self.alpha = self.add_param(ALPHA_NAME, np.full((1, 1, 1, 1), config.alpha_init, dtype=self.dtype))

    def forward(self, image: Tensor, keep_features: bool = False) -> ForwardOutput:
        if image.dtype != self.dtype:
            image = Tensor(image.data.astype(self.dtype), requires_grad=image.requires_grad)

        scales = self.backbone(image)
        if self.miem:
            scales = [block(s) for block, s in zip(self.miem, scales)]
        fused = self.fpn(scales)
        coarse = self.coarse_head(fused)

        features = {}
        if keep_features:
            features.update(fused=fused)
        if not self.config.use_scm:
            return ForwardOutput(coarse=coarse, refined=None, features=features)

        filtered = mapping_filter(fused, coarse)
        false_positive = self.cpfsm(filtered)
        calibrated = scm_calibrate(fused, false_positive, self.alpha)
        refined = self.refined_head(calibrated)
        if keep_features:
            features.update(filtered=filtered, false_positive=false_positive, calibrated=calibrated)
        return ForwardOutput(coarse=coarse, refined=refined, features=features)

    def alpha_value(self) -> Optional[float]:
        return float(self.alpha.data.reshape(())) if self.alpha is not None else None

    def no_decay_names(self) -> set:
        return {ALPHA_NAME} if self.alpha is not None else set()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return state_of(self)

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy arrays into the model; names and shapes must match exactly"""
        own = self.state_dict()
        missing = [name for name in own if name not in state]
        unexpected = [name for name in state if name not in own]
        mismatched = [name for name in own if name in state and tuple(state[name].shape) != own[name].shape]
        if missing or unexpected or mismatched:
            raise CheckpointError(
                "Checkpoint does not match the model configuration",
                context=ErrorContext(operation="load_state_dict", details={
                    "missing": missing[:10], "unexpected": unexpected[:10], "shape_mismatch": mismatched[:10]}))
        for name, target in own.items():
            target[...] = np.asarray(state[name], dtype=target.dtype)

    def parameter_count(self) -> int:
        return sum(t.data.size for _, t in self.named_parameters())

    def checksum(self) -> str:
        """SHA-256 over the float32 little-endian serialization of the state, in name order"""
        digest = hashes.Hash(hashes.SHA256())
        for name, array in self.state_dict().items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(array, dtype="<f4").tobytes())
        return digest.finalize().hex()


def std_forward(image: Tensor, model: StdModel) -> Tuple[Tensor, Optional[Tensor]]:
    """(coarse mask at stride 4, refined mask at stride 1)"""
    out = model(image)
    return out.coarse, out.refined


def zero_conv_weights(model: Layer) -> None:
    """Zero every conv weight and bias (batch-norm affine parameters are left alone)"""
    for name, t in model.named_parameters():
        if name.endswith(".weight") or name.endswith(".bias"):
            t.data[...] = 0.0


def expected_shapes(config: ModelConfig, height: int, width: int) -> List[Tuple[int, int]]:
    """Spatial sizes of the coarse and refined masks for an input size"""
    return [(height // 4, width // 4), (height, width)]
