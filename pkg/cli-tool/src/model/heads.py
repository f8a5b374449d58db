"""
Segmentation heads.

coarse   sigmoid(conv3x3(relu(bn(conv3x3(F_fuse)))))             stride 4
refined  sigmoid(convt2x2(relu(bn(convt2x2(relu(bn(conv3x3(F_c))))))))   stride 1
"""

import numpy as np

from src.core import functional as F
from src.core.tensor import Tensor
from src.model.layers import BatchNorm2d, Conv2d, ConvBNReLU, ConvTranspose2d, Layer


class CoarseHead(Layer):
    """
    M_cs = sigmoid(conv3x3(conv3x3(F_fuse))), plus BN and ReLU between
    the two convs.
    """

    def __init__(self, channels: int, rng: np.random.Generator, bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        super().__init__()
        hidden = max(channels // 4, 1)
        self.hidden = self.add_child("hidden", ConvBNReLU(channels, hidden, 3, rng, padding=1,
                                                          bn_momentum=bn_momentum, bn_eps=bn_eps))
        self.out = self.add_child("out", Conv2d(hidden, 1, 3, rng, padding=1, bias=True))

    def forward(self, fused: Tensor) -> Tensor:
        return F.sigmoid(self.out(self.hidden(fused)))


class RefinedHead(Layer):
    """
    M_rs = sigmoid(convt2x2(convt2x2(conv3x3(F_c)))), plus BN and ReLU after
    the conv3x3 and after the first convt2x2.
    """

    def __init__(self, channels: int, rng: np.random.Generator, bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        super().__init__()
        hidden = max(channels // 4, 1)
        self.hidden = self.add_child("hidden", ConvBNReLU(channels, hidden, 3, rng, padding=1,
                                                          bn_momentum=bn_momentum, bn_eps=bn_eps))
        self.up1 = self.add_child("up1", ConvTranspose2d(hidden, hidden, 2, rng, stride=2))
        self.up1_bn = self.add_child("up1_bn", BatchNorm2d(hidden, bn_momentum, bn_eps))
        self.up2 = self.add_child("up2", ConvTranspose2d(hidden, 1, 2, rng, stride=2, bias=True))

    def forward(self, calibrated: Tensor) -> Tensor:
        x = self.hidden(calibrated)
        x = F.relu(self.up1_bn(self.up1(x)))
        return F.sigmoid(self.up2(x))
