"""
Multi-branch feature extraction block applied to every backbone scale.

    S      = conv1x1(F)                               standardize
    R_k    = relu(bn(conv1x1_k(S)))  k = 1..4         C -> C/4 each
    F_hat  = concat(conv1x9(R_1), conv9x1(R_2), conv3x3(R_3), conv3x3_dil2(R_4))
    F_bar  = conv1x1(F_hat)
    output = F + F_bar + F_hat
"""

from typing import Dict

import numpy as np

from src.core import functional as F
from src.core.tensor import Tensor
from src.model.layers import Conv2d, ConvBNReLU, Layer
from src.utils.error_handling import require_shape

# (kernel, dilation, (top, bottom, left, right)) of the four geometric branches
BRANCHES = (
    ((1, 9), 1, (0, 0, 4, 4)),
    ((9, 1), 1, (4, 4, 0, 0)),
    ((3, 3), 1, (1, 1, 1, 1)),
    ((3, 3), 2, (2, 2, 2, 2)),
)


class MIEMBlock(Layer):
    def __init__(self, channels: int, rng: np.random.Generator, bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        super().__init__()
        require_shape(channels % 4 == 0, f"MIEM width {channels} is not divisible by 4", "miem_block",
                      channels=channels)
        self.channels = channels
        reduced = channels // 4
        self.standardize = self.add_child("standardize", Conv2d(channels, channels, 1, rng))
        self.reductions = [
            self.add_child(f"reduce{i}", ConvBNReLU(channels, reduced, 1, rng, bn_momentum=bn_momentum, bn_eps=bn_eps))
            for i in range(1, 5)
        ]
        self.branches = [
            self.add_child(f"branch{i}", Conv2d(reduced, reduced, kernel, rng, dilation=dilation, padding=padding))
            for i, (kernel, dilation, padding) in enumerate(BRANCHES, 1)
        ]
        self.project = self.add_child("project", Conv2d(channels, channels, 1, rng))

    def forward(self, features: Tensor) -> Tensor:
        require_shape(features.shape[1] == self.channels,
                      f"MIEM block expects {self.channels} channels, got {features.shape[1]}", "miem_block")
        standardized = self.standardize(features)
        branch_outputs = [branch(reduce(standardized)) for reduce, branch in zip(self.reductions, self.branches)]
        f_hat = F.concat_channels(branch_outputs)
        f_bar = self.project(f_hat)
        return F.add(F.add(features, f_bar), f_hat)


def branch_macs_per_pixel(channels: int) -> int:
    """MACs per pixel of the four geometric branches: 4 * 9 * (C/4)^2"""
    reduced = channels // 4
    return sum(kh * kw * reduced * reduced for (kh, kw), _, _ in BRANCHES)


def dense3x3_macs_per_pixel(channels: int) -> int:
    return 9 * channels * channels


def block_macs_per_pixel(channels: int) -> Dict[str, int]:
    """Per-pixel MACs of every part of the block"""
    reduced = channels // 4
    return {
        "standardize": channels * channels,
        "reductions": 4 * channels * reduced,
        "branches": branch_macs_per_pixel(channels),
        "project": channels * channels,
    }
