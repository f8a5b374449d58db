"""
Parameterized layers on top of the functional operators.

A Layer owns named parameters, named buffers (batch-norm running
statistics) and named child layers; names compose into dotted paths such
as ``backbone.stage1.conv1.weight``.
"""

from collections import OrderedDict
from typing import Dict, Iterator, Tuple, Union

import numpy as np

from src.core import functional as F
from src.core.functional import ConvSpec
from src.core.tensor import Tensor, default_dtype, parameter


class Layer:
    """Base for everything that holds parameters"""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._children: "OrderedDict[str, Layer]" = OrderedDict()
        self.training = True

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        t = parameter(data, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        self._buffers[name] = data
        return data

    def add_child(self, name: str, layer: "Layer") -> "Layer":
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for child_name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(self.named_parameters())

    def train(self, mode: bool = True) -> "Layer":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Layer":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def kaiming_normal(shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: Union[int, Tuple[int, int]],
                 rng: np.random.Generator, stride: int = 1, dilation: int = 1, padding=0, bias: bool = False):
        super().__init__()
        self.spec = ConvSpec.make(in_channels, out_channels, kernel, stride, dilation, padding, bias)
        fan_in = in_channels * self.spec.kernel_h * self.spec.kernel_w
        dtype = default_dtype()
        self.weight = self.add_param("weight", kaiming_normal(self.spec.weight_shape, fan_in, rng).astype(dtype))
        self.bias = self.add_param("bias", np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.spec, self.weight, self.bias)


class ConvTranspose2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 2, bias: bool = False):
        super().__init__()
        self.spec = ConvSpec.make(in_channels, out_channels, kernel, stride, 1, 0, bias)
        fan_in = in_channels * kernel * kernel
        dtype = default_dtype()
        self.weight = self.add_param(
            "weight", kaiming_normal(self.spec.transposed_weight_shape, fan_in, rng).astype(dtype))
        self.bias = self.add_param("bias", np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.spec, self.weight, self.bias)


class BatchNorm2d(Layer):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dtype = default_dtype()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.running_var = self.add_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, (self.running_mean, self.running_var),
                            self.training, self.momentum, self.eps)


class ConvBNReLU(Layer):
    """conv (no bias) -> batch norm -> relu"""

    def __init__(self, in_channels: int, out_channels: int, kernel, rng: np.random.Generator,
                 stride: int = 1, dilation: int = 1, padding=0, bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        super().__init__()
        self.conv = self.add_child("conv", Conv2d(in_channels, out_channels, kernel, rng, stride, dilation, padding))
        self.bn = self.add_child("bn", BatchNorm2d(out_channels, bn_momentum, bn_eps))

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))


def count_conv_macs(spec: ConvSpec, out_h: int, out_w: int) -> int:
    """Multiply-accumulates of a convolution: output elements * in_channels * kh * kw"""
    return out_h * out_w * spec.out_channels * spec.in_channels * spec.kernel_h * spec.kernel_w


def layer_param_count(layer: Layer, include_buffers: bool = True) -> int:
    total = sum(t.data.size for _, t in layer.named_parameters())
    if include_buffers:
        total += sum(b.size for _, b in layer.named_buffers())
    return total


def state_of(layer: Layer) -> Dict[str, np.ndarray]:
    state: Dict[str, np.ndarray] = OrderedDict()
    for name, t in layer.named_parameters():
        state[name] = t.data
    for name, b in layer.named_buffers():
        state[name] = b
    return state
