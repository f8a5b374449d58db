"""
Calibration of the fused features by the coarse prediction.

mapping_filter   F_mf = F_fuse * M_cs (broadcast over channels)
CPFSM            grouped cascade of dilated 3x3 convs
                   H1_1 = conv1x1(g_1)
                   H1_i = conv1x1(g_i) + H2_{i-1}          i = 2..4
                   H2_i = conv3x3, dilation i, padding i (H1_i)
                   F_fp = conv1x1(concat(H2_1..H2_4))
scm_calibrate    F_c = F_fuse + alpha * F_fp
"""

from typing import List, Optional

import numpy as np

from src.core import functional as F
from src.core.tensor import Tensor
from src.model.layers import Conv2d, Layer
from src.utils.error_handling import require_shape

GROUPS = 4


def mapping_filter(fused: Tensor, coarse_mask: Tensor) -> Tensor:
    require_shape(fused.shape[2:] == coarse_mask.shape[2:],
                  f"mask {coarse_mask.shape} does not match features {fused.shape}", "mapping_filter")
    return F.mul_channel_broadcast(fused, coarse_mask)


def scm_calibrate(fused: Tensor, false_positive: Tensor, alpha: Tensor) -> Tensor:
    require_shape(fused.shape == false_positive.shape,
                  f"calibration shapes differ: {fused.shape} vs {false_positive.shape}", "scm_calibrate")
    return F.add(fused, F.mul_scalar_param(false_positive, alpha))


def receptive_radius(groups: int = GROUPS) -> int:
    """Radius of the deepest cascade path: sum of dilations 1..groups"""
    return sum(range(1, groups + 1))


class CPFSM(Layer):
    def __init__(self, channels: int, width: int, rng: np.random.Generator):
        super().__init__()
        require_shape(channels % GROUPS == 0, f"CPFSM input width {channels} is not divisible by {GROUPS}", "cpfsm",
                      channels=channels)
        self.channels = channels
        self.width = width
        group_width = channels // GROUPS
        self.entry = [self.add_child(f"entry{i}", Conv2d(group_width, width, 1, rng)) for i in range(1, GROUPS + 1)]
        self.search = [self.add_child(f"search{i}", Conv2d(width, width, 3, rng, dilation=i, padding=i))
                       for i in range(1, GROUPS + 1)]
        self.fuse = self.add_child("fuse", Conv2d(width * GROUPS, channels, 1, rng))

    def cascade(self, features: Tensor, drop_carry: Optional[int] = None) -> List[Tensor]:
        """
        H1_1..H1_4 followed by H2_1..H2_4.

        Args:
            drop_carry: group index i (2..4) whose H2_{i-1} term is left out
        """
        require_shape(features.shape[1] == self.channels,
                      f"CPFSM expects {self.channels} channels, got {features.shape[1]}", "cpfsm")
        groups = F.split_channels(features, GROUPS)
        first, second = [], []
        carry = None
        for index, (group, entry, search) in enumerate(zip(groups, self.entry, self.search), 1):
            h1 = entry(group)
            if carry is not None and index != drop_carry:
                h1 = F.add(h1, carry)
            h2 = search(h1)
            first.append(h1)
            second.append(h2)
            carry = h2
        return first + second

    def forward(self, features: Tensor) -> Tensor:
        second = self.cascade(features)[GROUPS:]
        return self.fuse(F.concat_channels(second))
