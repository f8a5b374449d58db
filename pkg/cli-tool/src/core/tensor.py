"""
Dense tensor with a dynamic autodiff tape.

Every forward call of a `Function` records the function on its output
tensor; `Tensor.backward` walks the recorded graph in reverse topological
order and accumulates gradients into the leaves.
"""

import logging
from contextlib import contextmanager
from typing import Any, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.error_handling import ErrorContext, NumericalError, ShapeError

logger = logging.getLogger(__name__)

_PRECISIONS = {64: np.float64, 32: np.float32}
_default_dtype = np.float64
_grad_enabled = True


def default_dtype() -> type:
    return _default_dtype


def set_precision(bits: int) -> None:
    """Select the float width for newly created tensors (64 or 32)"""
    global _default_dtype
    if bits not in _PRECISIONS:
        raise ShapeError(f"Unsupported precision {bits}; use 64 or 32",
                         ErrorContext(operation="set_precision", details={"bits": bits}))
    _default_dtype = _PRECISIONS[bits]


@contextmanager
def precision(bits: int) -> Iterator[None]:
    previous = _default_dtype
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(64 if previous is np.float64 else 32)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run forward passes without recording the tape"""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on raw arrays and `backward`, which maps
    the gradient of the output to a tuple of gradients, one per input tensor
    (None for inputs that need no gradient).
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)

        if not np.all(np.isfinite(out_data)):
            raise NumericalError(
                f"{cls.__name__} produced non-finite values",
                ErrorContext(operation=cls.__name__, details={"shape": list(out_data.shape)}))

        requires_grad = _grad_enabled and any(t.requires_grad for t in tensors)
        return Tensor(out_data, requires_grad=requires_grad,
                      creator=func if requires_grad else None, dtype=out_data.dtype)

    def needs_grad(self, index: int) -> bool:
        return self.tensors[index].requires_grad


class Tensor:
    """
    A 4-D activation (batch, channels, height, width) or a 1-D parameter
    vector, holding its data, an optional gradient, and the function that
    created it.
    """

    def __init__(self, data: Union[np.ndarray, Sequence, float], requires_grad: bool = False,
                 creator: Optional[Function] = None, name: Optional[str] = None, dtype=None):
        array = np.asarray(data, dtype=dtype or _default_dtype)
        if array.ndim not in (1, 4):
            raise ShapeError(f"Tensor must be 4-D or 1-D, got shape {array.shape}",
                             ErrorContext(operation="tensor", details={"shape": list(array.shape)}))
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.creator = creator
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ShapeError(f"Gradient shape {grad.shape} does not match tensor shape {self.data.shape}",
                             ErrorContext(operation="backward", details={"tensor": self.name}))
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Accumulate d(self)/d(leaf) into every leaf that requires a gradient.

        Args:
            grad: upstream gradient; defaults to ones, which requires a
                  single-element tensor (a scalar loss)
        """
        if not self.requires_grad:
            return

        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a single-element tensor",
                                 ErrorContext(operation="backward", details={"shape": list(self.shape)}))
            grad = np.ones_like(self.data)

        # Post-order traversal gives a topological order of the tape
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, children_done = stack.pop()
            if id(node) in visited:
                continue
            if children_done:
                visited.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.tensors:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

        pending = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node.creator is None:
                node._accumulate_grad(node_grad)
                continue

            input_grads = node.creator.backward(node_grad)
            for parent, g in zip(node.creator.tensors, input_grads):
                if g is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(g)):
                    raise NumericalError(
                        f"{type(node.creator).__name__} backward produced non-finite gradients",
                        ErrorContext(operation="backward", details={"tensor": parent.name}))
                if g.shape != parent.data.shape:
                    raise ShapeError(
                        f"{type(node.creator).__name__} backward returned shape {g.shape}, expected {parent.shape}",
                        ErrorContext(operation="backward"))
                if id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + g
                else:
                    pending[id(parent)] = g

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"


def parameter(data: Union[np.ndarray, Sequence, float], name: Optional[str] = None) -> Tensor:
    """Leaf tensor that collects gradients"""
    return Tensor(data, requires_grad=True, name=name)
