"""
Differentiable operators of the detector graph.

Each operator is a `Function` subclass with an explicit backward rule,
plus a thin functional wrapper that validates shapes before recording the
operation on the tape.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.tensor import Function, Tensor
from src.utils.error_handling import ErrorContext, ShapeError, require_shape

Padding = Tuple[int, int, int, int]


def _normalize_padding(padding: Union[int, Tuple[int, int], Tuple[int, int, int, int]]) -> Padding:
    if isinstance(padding, int):
        return (padding, padding, padding, padding)
    if len(padding) == 2:
        return (padding[0], padding[0], padding[1], padding[1])
    if len(padding) == 4:
        return tuple(int(p) for p in padding)
    raise ShapeError(f"Padding must be an int, (pad_h, pad_w) or (top, bottom, left, right), got {padding}",
                     ErrorContext(operation="conv_spec"))


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution; padding is (top, bottom, left, right)"""
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    dilation: int = 1
    padding: Padding = (0, 0, 0, 0)
    has_bias: bool = False

    @classmethod
    def make(cls, in_channels: int, out_channels: int, kernel: Union[int, Tuple[int, int]],
             stride: int = 1, dilation: int = 1, padding=0, has_bias: bool = False) -> "ConvSpec":
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        spec = cls(in_channels, out_channels, kh, kw, stride, dilation, _normalize_padding(padding), has_bias)
        spec.validate()
        return spec

    def validate(self) -> None:
        counts = {"in_channels": self.in_channels, "out_channels": self.out_channels,
                  "kernel_h": self.kernel_h, "kernel_w": self.kernel_w,
                  "stride": self.stride, "dilation": self.dilation}
        for key, value in counts.items():
            require_shape(value >= 1, f"ConvSpec.{key} must be positive, got {value}", "conv_spec", **counts)
        require_shape(all(p >= 0 for p in self.padding), f"ConvSpec padding must be non-negative: {self.padding}",
                      "conv_spec")

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    @property
    def transposed_weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.in_channels, self.out_channels, self.kernel_h, self.kernel_w)

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        """floor((in + pad_total - dilation*(kernel-1) - 1)/stride) + 1 per axis"""
        top, bottom, left, right = self.padding
        out_h = (height + top + bottom - self.dilation * (self.kernel_h - 1) - 1) // self.stride + 1
        out_w = (width + left + right - self.dilation * (self.kernel_w - 1) - 1) // self.stride + 1
        require_shape(out_h >= 1 and out_w >= 1,
                      f"Convolution output would be {out_h}x{out_w} for input {height}x{width}",
                      "conv2d", input=[height, width], kernel=[self.kernel_h, self.kernel_w],
                      dilation=self.dilation, stride=self.stride)
        return out_h, out_w

    def transposed_output_size(self, height: int, width: int) -> Tuple[int, int]:
        top, bottom, left, right = self.padding
        out_h = (height - 1) * self.stride + self.dilation * (self.kernel_h - 1) + 1 - top - bottom
        out_w = (width - 1) * self.stride + self.dilation * (self.kernel_w - 1) + 1 - left - right
        require_shape(out_h >= 1 and out_w >= 1,
                      f"Transposed convolution output would be {out_h}x{out_w}", "conv_transpose2d")
        return out_h, out_w


class Conv2d(Function):
    """Cross-correlation over sliding windows, contracted with tensordot"""

    def forward(self, x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None, *,
                spec: ConvSpec) -> np.ndarray:
        top, bottom, left, right = spec.padding
        s, d = spec.stride, spec.dilation
        xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
        span_h = d * (spec.kernel_h - 1) + 1
        span_w = d * (spec.kernel_w - 1) + 1
        # (N, C, Ho, Wo, kh, kw)
        windows = sliding_window_view(xp, (span_h, span_w), axis=(2, 3))[:, :, ::s, ::s, ::d, ::d]

        self.spec = spec
        self.padded_shape = xp.shape
        self.windows = windows
        self.out_hw = windows.shape[2:4]

        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        if b is not None:
            out += b.reshape(1, -1, 1, 1)
        return out

    def backward(self, grad: np.ndarray):
        spec = self.spec
        x_t, w_t = self.tensors[0], self.tensors[1]
        grad_x = grad_w = grad_b = None

        if w_t.requires_grad:
            grad_w = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)

        if len(self.tensors) > 2 and self.tensors[2].requires_grad:
            grad_b = grad.sum(axis=(0, 2, 3))

        if x_t.requires_grad:
            s, d = spec.stride, spec.dilation
            out_h, out_w = self.out_hw
            columns = np.tensordot(grad, w_t.data, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
            grad_xp = np.zeros(self.padded_shape, dtype=grad.dtype)
            for i in range(spec.kernel_h):
                for j in range(spec.kernel_w):
                    grad_xp[:, :, i * d:i * d + s * (out_h - 1) + 1:s, j * d:j * d + s * (out_w - 1) + 1:s] += \
                        columns[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            top, bottom, left, right = spec.padding
            height, width = self.padded_shape[2], self.padded_shape[3]
            grad_x = np.ascontiguousarray(grad_xp[:, :, top:height - bottom, left:width - right])

        if len(self.tensors) > 2:
            return grad_x, grad_w, grad_b
        return grad_x, grad_w


class ConvTranspose2d(Function):
    """Scatter of every input pixel through the kernel, stride-spaced"""

    def forward(self, x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None, *,
                spec: ConvSpec) -> np.ndarray:
        n, _, height, width = x.shape
        s, d = spec.stride, spec.dilation
        full_h = (height - 1) * s + d * (spec.kernel_h - 1) + 1
        full_w = (width - 1) * s + d * (spec.kernel_w - 1) + 1
        contributions = np.tensordot(x, w, axes=([1], [0]))  # (N, H, W, O, kh, kw)
        full = np.zeros((n, spec.out_channels, full_h, full_w), dtype=x.dtype)
        for i in range(spec.kernel_h):
            for j in range(spec.kernel_w):
                full[:, :, i * d:i * d + s * (height - 1) + 1:s, j * d:j * d + s * (width - 1) + 1:s] += \
                    contributions[:, :, :, :, i, j].transpose(0, 3, 1, 2)

        self.spec = spec
        self.in_hw = (height, width)
        self.full_hw = (full_h, full_w)

        top, bottom, left, right = spec.padding
        out = np.ascontiguousarray(full[:, :, top:full_h - bottom, left:full_w - right])
        if b is not None:
            out += b.reshape(1, -1, 1, 1)
        return out

    def backward(self, grad: np.ndarray):
        spec = self.spec
        x_t, w_t = self.tensors[0], self.tensors[1]
        s, d = spec.stride, spec.dilation
        height, width = self.in_hw
        top, bottom, left, right = spec.padding
        full_h, full_w = self.full_hw

        grad_full = np.zeros(grad.shape[:2] + (full_h, full_w), dtype=grad.dtype)
        grad_full[:, :, top:full_h - bottom, left:full_w - right] = grad
        # (N, O, H, W, kh, kw): the output positions each input pixel wrote to
        gathered = np.stack([
            np.stack([grad_full[:, :, i * d:i * d + s * (height - 1) + 1:s, j * d:j * d + s * (width - 1) + 1:s]
                      for j in range(spec.kernel_w)], axis=-1)
            for i in range(spec.kernel_h)], axis=-2)

        grad_x = grad_w = grad_b = None
        if x_t.requires_grad:
            grad_x = np.ascontiguousarray(
                np.tensordot(gathered, w_t.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        if w_t.requires_grad:
            grad_w = np.tensordot(x_t.data, gathered, axes=([0, 2, 3], [0, 2, 3]))  # (C, O, kh, kw)
        if len(self.tensors) > 2:
            if self.tensors[2].requires_grad:
                grad_b = grad.sum(axis=(0, 2, 3))
            return grad_x, grad_w, grad_b
        return grad_x, grad_w


class BatchNorm(Function):
    """Per-channel normalization; running statistics are updated in place in train mode"""

    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, *,
                running_mean: np.ndarray, running_var: np.ndarray, training: bool,
                momentum: float, eps: float) -> np.ndarray:
        n, c, h, w = x.shape
        count = n * h * w
        if training:
            require_shape(count > 0, "Batch norm in train mode needs at least one element per channel",
                          "batch_norm", shape=list(x.shape))
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            unbiased = var * count / (count - 1) if count > 1 else var
            running_mean *= (1.0 - momentum)
            running_mean += momentum * mean
            running_var *= (1.0 - momentum)
            running_var += momentum * unbiased
        else:
            mean = running_mean.astype(x.dtype)
            var = running_var.astype(x.dtype)

        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)

        self.training = training
        self.x_hat = x_hat
        self.inv_std = inv_std
        self.count = count
        return x_hat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)

    def backward(self, grad: np.ndarray):
        gamma = self.tensors[1].data
        c = gamma.shape[0]
        grad_gamma = (grad * self.x_hat).sum(axis=(0, 2, 3)) if self.needs_grad(1) else None
        grad_beta = grad.sum(axis=(0, 2, 3)) if self.needs_grad(2) else None

        grad_x = None
        if self.needs_grad(0):
            grad_x_hat = grad * gamma.reshape(1, c, 1, 1)
            inv_std = self.inv_std.reshape(1, c, 1, 1)
            if self.training:
                sum_g = grad_x_hat.sum(axis=(0, 2, 3), keepdims=True)
                sum_gx = (grad_x_hat * self.x_hat).sum(axis=(0, 2, 3), keepdims=True)
                grad_x = inv_std / self.count * (self.count * grad_x_hat - sum_g - self.x_hat * sum_gx)
            else:
                grad_x = grad_x_hat * inv_std
        return grad_x, grad_gamma, grad_beta


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0.0).astype(x.dtype)

    def backward(self, grad: np.ndarray):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        # Split by sign so exp never overflows
        out = np.empty_like(x)
        positive = x >= 0
        out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
        exp_x = np.exp(x[~positive])
        out[~positive] = exp_x / (1.0 + exp_x)
        self.out = out
        return out

    def backward(self, grad: np.ndarray):
        return (grad * self.out * (1.0 - self.out),)


class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x + y

    def backward(self, grad: np.ndarray):
        return grad, grad


class Mul(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.x, self.y = x, y
        return x * y

    def backward(self, grad: np.ndarray):
        return grad * self.y, grad * self.x


class MulChannelBroadcast(Function):
    """(N, C, H, W) features times an (N, 1, H, W) mask shared by every channel"""

    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        self.x, self.mask = x, mask
        return x * mask

    def backward(self, grad: np.ndarray):
        grad_x = grad * self.mask if self.needs_grad(0) else None
        grad_mask = (grad * self.x).sum(axis=1, keepdims=True) if self.needs_grad(1) else None
        return grad_x, grad_mask


class MulScalarParam(Function):
    """x times a trainable (1, 1, 1, 1) scalar"""

    def forward(self, x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        self.x, self.alpha = x, alpha
        return x * alpha.reshape(())

    def backward(self, grad: np.ndarray):
        grad_x = grad * self.alpha.reshape(()) if self.needs_grad(0) else None
        grad_alpha = np.full(self.alpha.shape, (grad * self.x).sum(), dtype=grad.dtype) \
            if self.needs_grad(1) else None
        return grad_x, grad_alpha


class Scale(Function):
    """x times a fixed constant"""

    def forward(self, x: np.ndarray, *, factor: float) -> np.ndarray:
        self.factor = factor
        return x * factor

    def backward(self, grad: np.ndarray):
        return (grad * self.factor,)


class Concat(Function):
    def forward(self, *xs: np.ndarray) -> np.ndarray:
        self.splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad: np.ndarray):
        return tuple(np.ascontiguousarray(g) for g in np.split(grad, self.splits, axis=1))


class SliceChannels(Function):
    def forward(self, x: np.ndarray, *, start: int, stop: int) -> np.ndarray:
        self.start, self.stop, self.shape = start, stop, x.shape
        return np.ascontiguousarray(x[:, start:stop])

    def backward(self, grad: np.ndarray):
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[:, self.start:self.stop] = grad
        return (full,)


class UpsampleNearest(Function):
    def forward(self, x: np.ndarray, *, factor: int) -> np.ndarray:
        self.factor = factor
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, grad: np.ndarray):
        n, c, h, w = grad.shape
        f = self.factor
        return (grad.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


# -- functional wrappers ----------------------------------------------------

def _check_4d(t: Tensor, operation: str) -> None:
    require_shape(t.data.ndim == 4, f"{operation} expects a 4-D tensor, got {t.shape}", operation,
                  shape=list(t.shape))


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    _check_4d(x, "conv2d")
    require_shape(weight.shape == spec.weight_shape,
                  f"conv2d weight shape {weight.shape} != {spec.weight_shape}", "conv2d")
    require_shape(x.shape[1] == spec.in_channels,
                  f"conv2d expects {spec.in_channels} input channels, got {x.shape[1]}", "conv2d",
                  input=list(x.shape))
    spec.output_size(x.shape[2], x.shape[3])
    if bias is not None:
        require_shape(bias.shape == (spec.out_channels,), f"conv2d bias shape {bias.shape}", "conv2d")
        return Conv2d.apply(x, weight, bias, spec=spec)
    return Conv2d.apply(x, weight, spec=spec)


def conv_transpose2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    _check_4d(x, "conv_transpose2d")
    require_shape(weight.shape == spec.transposed_weight_shape,
                  f"conv_transpose2d weight shape {weight.shape} != {spec.transposed_weight_shape}",
                  "conv_transpose2d")
    require_shape(x.shape[1] == spec.in_channels,
                  f"conv_transpose2d expects {spec.in_channels} input channels, got {x.shape[1]}",
                  "conv_transpose2d")
    spec.transposed_output_size(x.shape[2], x.shape[3])
    if bias is not None:
        require_shape(bias.shape == (spec.out_channels,), f"conv_transpose2d bias shape {bias.shape}",
                      "conv_transpose2d")
        return ConvTranspose2d.apply(x, weight, bias, spec=spec)
    return ConvTranspose2d.apply(x, weight, spec=spec)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_stats: Tuple[np.ndarray, np.ndarray],
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    _check_4d(x, "batch_norm")
    channels = x.shape[1]
    running_mean, running_var = running_stats
    require_shape(gamma.shape == (channels,) and beta.shape == (channels,)
                  and running_mean.shape == (channels,) and running_var.shape == (channels,),
                  f"batch_norm parameters must have length {channels}", "batch_norm")
    return BatchNorm.apply(x, gamma, beta, running_mean=running_mean, running_var=running_var,
                           training=training, momentum=momentum, eps=eps)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def add(x: Tensor, y: Tensor) -> Tensor:
    require_shape(x.shape == y.shape, f"add shape mismatch {x.shape} vs {y.shape}", "add")
    return Add.apply(x, y)


def mul_elementwise(x: Tensor, y: Tensor) -> Tensor:
    require_shape(x.shape == y.shape, f"mul shape mismatch {x.shape} vs {y.shape}", "mul_elementwise")
    return Mul.apply(x, y)


def mul_channel_broadcast(x: Tensor, mask: Tensor) -> Tensor:
    _check_4d(x, "mul_channel_broadcast")
    require_shape(mask.data.ndim == 4 and mask.shape[1] == 1
                  and mask.shape[0] == x.shape[0] and mask.shape[2:] == x.shape[2:],
                  f"mask {mask.shape} cannot gate features {x.shape}", "mul_channel_broadcast")
    return MulChannelBroadcast.apply(x, mask)


def mul_scalar_param(x: Tensor, alpha: Tensor) -> Tensor:
    require_shape(alpha.shape == (1, 1, 1, 1), f"scalar parameter must have shape (1,1,1,1), got {alpha.shape}",
                  "mul_scalar_param")
    return MulScalarParam.apply(x, alpha)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    require_shape(len(xs) > 0, "concat needs at least one tensor", "concat_channels")
    for t in xs:
        _check_4d(t, "concat_channels")
    reference = (xs[0].shape[0],) + xs[0].shape[2:]
    require_shape(all((t.shape[0],) + t.shape[2:] == reference for t in xs),
                  f"concat requires matching batch/spatial dims: {[t.shape for t in xs]}", "concat_channels")
    return Concat.apply(*xs)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check_4d(x, "slice_channels")
    require_shape(0 <= start < stop <= x.shape[1], f"bad channel slice [{start}:{stop}] of {x.shape}",
                  "slice_channels")
    return SliceChannels.apply(x, start=start, stop=stop)


def split_channels(x: Tensor, groups: int) -> List[Tensor]:
    require_shape(x.shape[1] % groups == 0, f"{x.shape[1]} channels cannot split into {groups} groups",
                  "split_channels")
    width = x.shape[1] // groups
    return [slice_channels(x, g * width, (g + 1) * width) for g in range(groups)]


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    _check_4d(x, "upsample_nearest")
    require_shape(isinstance(factor, (int, np.integer)) and factor >= 1,
                  f"upsample factor must be a positive integer, got {factor}", "upsample_nearest")
    if factor == 1:
        return x
    return UpsampleNearest.apply(x, factor=int(factor))
