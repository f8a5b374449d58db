"""
Four-stage convolutional backbone.

A stride-2 stem followed by four stages of
[3x3 stride-2 conv + BN + ReLU, 3x3 conv + BN + ReLU], doubling channels
per stage, so stage i (1..4) lands at stride 2^(i+1) with C * 2^(i-1)
channels.
"""

from typing import List, Tuple

import numpy as np

from src.core.tensor import Tensor
from src.model.layers import ConvBNReLU, Layer
from src.utils.error_handling import require_shape

STAGE_COUNT = 4
INPUT_DIVISOR = 32


def stage_channels(base_channels: int) -> List[int]:
    return [base_channels * 2 ** i for i in range(STAGE_COUNT)]


def stage_shapes(base_channels: int, height: int, width: int) -> List[Tuple[int, int, int]]:
    """(channels, height, width) of every stage output"""
    return [(c, height // 2 ** (i + 2), width // 2 ** (i + 2))
            for i, c in enumerate(stage_channels(base_channels))]


class BackboneStage(Layer):
    """3x3 stride-2 conv + BN + ReLU, then 3x3 conv + BN + ReLU"""

    def __init__(self, in_channels: int, channels: int, rng: np.random.Generator, **bn):
        super().__init__()
        self.down = self.add_child("down", ConvBNReLU(in_channels, channels, 3, rng, stride=2, padding=1, **bn))
        self.conv = self.add_child("conv", ConvBNReLU(channels, channels, 3, rng, padding=1, **bn))

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(self.down(x))


class Backbone(Layer):
    def __init__(self, base_channels: int, rng: np.random.Generator, in_channels: int = 3,
                 bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        super().__init__()
        self.base_channels = base_channels
        bn = dict(bn_momentum=bn_momentum, bn_eps=bn_eps)
        self.stem = self.add_child("stem", ConvBNReLU(in_channels, base_channels, 3, rng, stride=2, padding=1, **bn))

        self.stages = []
        previous = base_channels
        for index, channels in enumerate(stage_channels(base_channels), 1):
            self.stages.append(self.add_child(f"stage{index}", BackboneStage(previous, channels, rng, **bn)))
            previous = channels

    def forward(self, image: Tensor) -> List[Tensor]:
        require_shape(image.data.ndim == 4 and image.shape[1] == 3,
                      f"backbone expects (N, 3, H, W), got {image.shape}", "backbone_forward")
        height, width = image.shape[2], image.shape[3]
        require_shape(height % INPUT_DIVISOR == 0 and width % INPUT_DIVISOR == 0 and height > 0 and width > 0,
                      f"input size {height}x{width} is not divisible by {INPUT_DIVISOR}", "backbone_forward",
                      height=height, width=width)

        x = self.stem(image)
        outputs = []
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return outputs
