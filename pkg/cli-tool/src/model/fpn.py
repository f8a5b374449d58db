"""
Feature pyramid fusion to a single stride-4 map.

Lateral 1x1 convs bring every scale to a common width, a top-down pass adds
nearest-upsampled coarser levels, a 3x3 conv smooths each level, then all
levels are upsampled to stride 4, concatenated and reduced by a 1x1 conv.
All convs are bias-free so the fusion is linear.
"""

from typing import List, Sequence

import numpy as np

from src.core import functional as F
from src.core.tensor import Tensor
from src.model.layers import Conv2d, Layer
from src.utils.error_handling import require_shape


class FPNFusion(Layer):
    def __init__(self, in_channels: Sequence[int], width: int, fused_width: int, rng: np.random.Generator):
        super().__init__()
        self.in_channels = list(in_channels)
        self.width = width
        self.fused_width = fused_width
        self.laterals = [self.add_child(f"lateral{i}", Conv2d(c, width, 1, rng))
                         for i, c in enumerate(self.in_channels, 1)]
        self.smooth = [self.add_child(f"smooth{i}", Conv2d(width, width, 3, rng, padding=1))
                       for i in range(1, len(self.in_channels) + 1)]
        self.reduce = self.add_child("reduce", Conv2d(width * len(self.in_channels), fused_width, 1, rng))

    def forward(self, scales: List[Tensor]) -> Tensor:
        require_shape(len(scales) == len(self.in_channels),
                      f"FPN expects {len(self.in_channels)} scales, got {len(scales)}", "fpn_fuse")
        base_h, base_w = scales[0].shape[2], scales[0].shape[3]
        for level, (t, channels) in enumerate(zip(scales, self.in_channels)):
            step = 2 ** level
            require_shape(t.shape[1] == channels and t.shape[2] * step == base_h and t.shape[3] * step == base_w,
                          f"scale {level + 1} has shape {t.shape}, inconsistent with the pyramid", "fpn_fuse",
                          level=level + 1, expected_channels=channels)

        laterals = [conv(t) for conv, t in zip(self.laterals, scales)]
        merged = [None] * len(laterals)
        merged[-1] = laterals[-1]
        for level in range(len(laterals) - 2, -1, -1):
            merged[level] = F.add(laterals[level], F.upsample_nearest(merged[level + 1], 2))

        smoothed = [conv(t) for conv, t in zip(self.smooth, merged)]
        aligned = [F.upsample_nearest(t, 2 ** level) for level, t in enumerate(smoothed)]
        return self.reduce(F.concat_channels(aligned))
