# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Tensor - Contains the :py:class:`Tensor` type, a dense float64 array that
records the operations applied to it, and the reverse-mode differentiation
machinery built on top of it.

Every operation exists as a module-level function; :py:class:`Tensor` exposes
most of them as methods that simply forward to the function, so
``conv2d(x, k, 1)`` and ``x.conv2d(k, 1)`` are interchangeable.

Images are laid out ``[B, H, W, C]`` and kernels ``[kh, kw, Cin, Cout]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit
from scipy.special import log_softmax as _log_softmax

from spooftrace.errors import DimensionError, NumericError, StatisticsError

LOGGER = logging.getLogger(__name__)

DTYPE = np.float64
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9

# batch and output positions of a window stack, contracted for kernel gradients
_POSITION_AXES = ([0, 1, 2], [0, 1, 2])

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
TensorLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
Padding = Tuple[int, int]


class Tensor:
    """
    A dense N-dimensional real array participating in reverse-mode
    differentiation. Leaves created with ``requires_grad=True`` own a
    same-shape :py:attr:`grad` buffer that :py:func:`backward` accumulates into.
    """

    def __init__(self, data: TensorLike, requires_grad: bool = False):
        self.data: np.ndarray = np.array(
            data.data if isinstance(data, Tensor) else data, dtype=DTYPE
        )
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if requires_grad else None
        )
        self.op = "leaf"
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        """
        The value of a single-element tensor as a Python float

        :raises DimensionError: If the tensor holds more than one element
        """
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got {self.shape}")

        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        "A copy of the underlying data"
        return self.data.copy()

    def backward(self) -> None:
        """
        Alias for :py:func:`backward(self) <backward>`
        """
        backward(self)

    def detach(self) -> Tensor:
        """
        Alias for :py:func:`detach(self) <detach>`
        """
        return detach(self)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        """
        Alias for :py:func:`sum_(self, axis, keepdims) <sum_>`
        """
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        """
        Alias for :py:func:`mean(self, axis, keepdims) <mean>`
        """
        return mean(self, axis, keepdims)

    def reshape(self, *shape: int) -> Tensor:
        """
        Alias for :py:func:`reshape(self, shape) <reshape>`
        """
        return reshape(self, shape)

    def abs(self) -> Tensor:
        """
        Alias for :py:func:`absolute(self) <absolute>`
        """
        return absolute(self)

    def square(self) -> Tensor:
        """
        Alias for :py:func:`square(self) <square>`
        """
        return square(self)

    def tanh(self) -> Tensor:
        """
        Alias for :py:func:`tanh(self) <tanh>`
        """
        return tanh(self)

    def sigmoid(self) -> Tensor:
        """
        Alias for :py:func:`sigmoid(self) <sigmoid>`
        """
        return sigmoid(self)

    def leaky_relu(self, slope: float = 0.2) -> Tensor:
        """
        Alias for :py:func:`leaky_relu(self, slope) <leaky_relu>`
        """
        return leaky_relu(self, slope)

    def conv2d(self, k: Tensor, stride: int = 1, pad: str = "same") -> Tensor:
        """
        Alias for :py:func:`conv2d(self, k, stride, pad) <conv2d>`
        """
        return conv2d(self, k, stride, pad)

    def transpose_conv2d(self, k: Tensor, stride: int = 2) -> Tensor:
        """
        Alias for :py:func:`transpose_conv2d(self, k, stride) <transpose_conv2d>`
        """
        return transpose_conv2d(self, k, stride)

    def resize_bilinear(self, out_h: int, out_w: int) -> Tensor:
        """
        Alias for :py:func:`resize_bilinear(self, out_h, out_w) <resize_bilinear>`
        """
        return resize_bilinear(self, out_h, out_w)

    def __add__(self, other: TensorLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: TensorLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: TensorLike) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: TensorLike) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: TensorLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: TensorLike) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: TensorLike) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index) -> Tensor:
        return getitem(self, index)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"


@dataclass(frozen=True)
class Graph:
    """
    The operations recorded below a scalar root, in topological order with the
    root last
    """

    nodes: Tuple[Tensor, ...]
    root: Tensor

    @staticmethod
    def of(root: Tensor) -> Graph:
        """
        Collect every node that contributes to ``root`` and requires a gradient
        """
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:  # pylint: disable=protected-access
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        return Graph(tuple(order), root)

    def backward(self) -> None:
        """
        Propagate d(root)/d(node) through the graph, visiting every node once
        in reverse topological order and accumulating into leaf gradients

        :raises DimensionError: If the root is not a scalar
        """
        if self.root.size != 1:
            raise DimensionError(f"backward needs a scalar root, got {self.root.shape}")

        pending: Dict[int, np.ndarray] = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node.is_leaf:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            # pylint: disable=protected-access
            parent_grads = node._backward(grad)  # type: ignore[misc]
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = (
                    pending[key] + parent_grad if key in pending else parent_grad
                )


def as_tensor(value: TensorLike) -> Tensor:
    "Wrap plain values in a constant :py:class:`Tensor`, pass tensors through"
    return value if isinstance(value, Tensor) else Tensor(value)


def record(
    data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str
) -> Tensor:
    """
    Create the result of an operation. The operation is only recorded when at
    least one parent requires a gradient; ``backward_fn`` maps the output
    gradient to one gradient (or ``None``) per parent.
    """
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=DTYPE)
    out.requires_grad = any(parent.requires_grad for parent in parents)
    out.grad = None
    out.op = op
    # pylint: disable=protected-access
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward_fn if out.requires_grad else None

    return out


def backward(root: Tensor) -> Graph:
    """
    Run reverse-mode differentiation from the scalar ``root``

    :return: The :py:class:`Graph` that was traversed
    """
    graph = Graph.of(root)
    graph.backward()

    return graph


def zero_grad(params: Sequence[Tensor]) -> None:
    "Reset the gradient buffers of the given leaves"
    for param in params:
        param.grad = np.zeros_like(param.data)


def detach(x: Tensor) -> Tensor:
    """
    Stop-gradient: same values, no connection to the graph
    """
    return Tensor(x.data)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


def add(a: TensorLike, b: TensorLike) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)

    def _backward(grad):
        return _unbroadcast(grad, ta.shape), _unbroadcast(grad, tb.shape)

    return record(ta.data + tb.data, (ta, tb), _backward, "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)

    def _backward(grad):
        return _unbroadcast(grad, ta.shape), _unbroadcast(-grad, tb.shape)

    return record(ta.data - tb.data, (ta, tb), _backward, "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)

    def _backward(grad):
        return (
            _unbroadcast(grad * tb.data, ta.shape),
            _unbroadcast(grad * ta.data, tb.shape),
        )

    return record(ta.data * tb.data, (ta, tb), _backward, "mul")


def div(a: TensorLike, b: TensorLike) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)

    def _backward(grad):
        return (
            _unbroadcast(grad / tb.data, ta.shape),
            _unbroadcast(-grad * ta.data / np.square(tb.data), tb.shape),
        )

    return record(ta.data / tb.data, (ta, tb), _backward, "div")


def neg(x: Tensor) -> Tensor:
    return record(-x.data, (x,), lambda grad: (-grad,), "neg")


def square(x: Tensor) -> Tensor:
    return record(
        np.square(x.data), (x,), lambda grad: (2.0 * x.data * grad,), "square"
    )


def absolute(x: Tensor) -> Tensor:
    "Elementwise ``|x|``; the subgradient at 0 is 0"
    return record(np.abs(x.data), (x,), lambda grad: (np.sign(x.data) * grad,), "abs")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    return record(out, (x,), lambda grad: ((1.0 - np.square(out)) * grad,), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    return record(out, (x,), lambda grad: (out * (1.0 - out) * grad,), "sigmoid")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """
    ``x`` where ``x >= 0``, ``slope * x`` elsewhere. ``slope=0`` gives a ReLU.
    """
    factor = np.where(x.data >= 0.0, 1.0, slope)

    return record(x.data * factor, (x,), lambda grad: (grad * factor,), "leaky_relu")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = _log_softmax(x.data, axis=axis)

    def _backward(grad):
        return (grad - np.exp(out) * grad.sum(axis=axis, keepdims=True),)

    return record(out, (x,), _backward, "log_softmax")


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def _backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)

    return record(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), _backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))

    return div(sum_(x, axis, keepdims), float(count))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return record(
        x.data.reshape(tuple(shape)),
        (x,),
        lambda grad: (grad.reshape(x.shape),),
        "reshape",
    )


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)

    return record(
        np.transpose(x.data, axes),
        (x,),
        lambda grad: (np.transpose(grad, inverse),),
        "transpose",
    )


def getitem(x: Tensor, index) -> Tensor:
    def _backward(grad):
        out = np.zeros_like(x.data)
        np.add.at(out, index, grad)
        return (out,)

    return record(x.data[index], (x,), _backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """
    Join tensors along an existing axis

    :raises DimensionError: If the remaining dimensions differ
    """
    try:
        out = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    except ValueError as error:
        raise DimensionError(str(error)) from error
    bounds = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    return record(
        out, tuple(tensors), lambda grad: np.split(grad, bounds, axis=axis), "concat"
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """
    Join same-shape tensors along a new axis

    :raises DimensionError: If the shapes differ
    """
    try:
        out = np.stack([tensor.data for tensor in tensors], axis=axis)
    except ValueError as error:
        raise DimensionError(str(error)) from error

    def _backward(grad):
        return [np.take(grad, i, axis=axis) for i in range(len(tensors))]

    return record(out, tuple(tensors), _backward, "stack")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")

    return record(
        a.data @ b.data,
        (a, b),
        lambda grad: (grad @ b.data.T, a.data.T @ grad),
        "matmul",
    )


def _same_padding(size: int, kernel: int, stride: int) -> Tuple[int, Padding]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)

    return out, (total // 2, total - total // 2)


def _conv_geometry(
    in_h: int, in_w: int, kh: int, kw: int, stride: int, pad: str
) -> Tuple[int, int, Padding, Padding]:
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if pad == "same":
        out_h, pad_h = _same_padding(in_h, kh, stride)
        out_w, pad_w = _same_padding(in_w, kw, stride)
    elif pad == "valid":
        if kh > in_h or kw > in_w:
            raise DimensionError(f"kernel {kh}x{kw} exceeds input {in_h}x{in_w}")
        out_h, out_w = (in_h - kh) // stride + 1, (in_w - kw) // stride + 1
        pad_h, pad_w = (0, 0), (0, 0)
    else:
        raise DimensionError(f"unknown padding '{pad}'")

    return out_h, out_w, pad_h, pad_w


def _windows(
    x: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int, pads
) -> np.ndarray:
    padded = np.pad(x, ((0, 0), pads[0], pads[1], (0, 0)))
    view = sliding_window_view(padded, (kh, kw), axis=(1, 2))

    # [B, out_h, out_w, Cin, kh, kw]
    return view[:, ::stride, ::stride][:, :out_h, :out_w]


def _scatter_windows(
    grad: np.ndarray, k: np.ndarray, stride: int, in_shape: Tuple[int, ...], pads
) -> np.ndarray:
    batch, in_h, in_w, channels = in_shape
    kh, kw = k.shape[:2]
    out_h, out_w = grad.shape[1:3]
    (top, bottom), (left, right) = pads
    # [B, out_h, out_w, kh, kw, Cin]
    patches = np.tensordot(grad, k, axes=([3], [3]))
    padded = np.zeros((batch, in_h + top + bottom, in_w + left + right, channels))
    for i in range(kh):
        for j in range(kw):
            padded[
                :,
                i : i + stride * (out_h - 1) + 1 : stride,
                j : j + stride * (out_w - 1) + 1 : stride,
                :,
            ] += patches[:, :, :, i, j, :]

    return padded[:, top : top + in_h, left : left + in_w, :]


def _check_rank(x: Tensor, k: Tensor) -> None:
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(
            f"expected [B,H,W,C] input and 4-D kernel, got {x.shape}, {k.shape}"
        )


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: str = "same") -> Tensor:
    """
    Cross-correlate ``x[B,H,W,Cin]`` with ``k[kh,kw,Cin,Cout]``. ``same``
    zero-pads so the output is ``ceil(H/stride)`` high, ``valid`` does not pad.

    :raises DimensionError: On mismatching channels, bad stride or padding
    """
    _check_rank(x, k)
    kh, kw, c_in, _ = k.shape
    if x.shape[3] != c_in:
        raise DimensionError(f"input has {x.shape[3]} channels, kernel expects {c_in}")
    out_h, out_w, pad_h, pad_w = _conv_geometry(
        x.shape[1], x.shape[2], kh, kw, stride, pad
    )
    windows = _windows(x.data, kh, kw, stride, out_h, out_w, (pad_h, pad_w))
    out = np.tensordot(windows, k.data, axes=([3, 4, 5], [2, 0, 1]))

    def _backward(grad):
        grad_x = (
            _scatter_windows(grad, k.data, stride, x.shape, (pad_h, pad_w))
            if x.requires_grad
            else None
        )
        grad_k = (
            np.tensordot(windows, grad, axes=_POSITION_AXES).transpose(1, 2, 0, 3)
            if k.requires_grad
            else None
        )
        return grad_x, grad_k

    return record(out, (x, k), _backward, "conv2d")


def transpose_conv2d(x: Tensor, k: Tensor, stride: int = 2) -> Tensor:
    """
    Upsample ``x[B,H,W,Cin]`` to ``[B, H*stride, W*stride, Cout]`` with
    ``k[kh,kw,Cout,Cin]``. This is the adjoint of :py:func:`conv2d` with
    ``same`` padding and the same kernel, i.e. the input gradient of that
    convolution.

    :raises DimensionError: On mismatching channels or a stride outside {1, 2}
    """
    _check_rank(x, k)
    if stride not in (1, 2):
        raise DimensionError(f"transpose_conv2d supports stride 1 or 2, got {stride}")
    kh, kw, c_out, c_in = k.shape
    if x.shape[3] != c_in:
        raise DimensionError(f"input has {x.shape[3]} channels, kernel expects {c_in}")
    batch, in_h, in_w, _ = x.shape
    out_shape = (batch, in_h * stride, in_w * stride, c_out)
    _, _, pad_h, pad_w = _conv_geometry(
        out_shape[1], out_shape[2], kh, kw, stride, "same"
    )
    out = _scatter_windows(x.data, k.data, stride, out_shape, (pad_h, pad_w))

    def _backward(grad):
        windows = _windows(grad, kh, kw, stride, in_h, in_w, (pad_h, pad_w))
        grad_x = (
            np.tensordot(windows, k.data, axes=([3, 4, 5], [2, 0, 1]))
            if x.requires_grad
            else None
        )
        grad_k = (
            np.tensordot(windows, x.data, axes=_POSITION_AXES).transpose(1, 2, 0, 3)
            if k.requires_grad
            else None
        )
        return grad_x, grad_k

    return record(out, (x, k), _backward, "transpose_conv2d")


@dataclass
class RunningStats:
    """
    Per-channel moving averages a batchnorm layer uses at inference time
    """

    mean: np.ndarray
    var: np.ndarray

    @staticmethod
    def of(channels: int) -> RunningStats:
        return RunningStats(np.zeros(channels), np.ones(channels))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    momentum: float = BN_MOMENTUM,
    running: Optional[RunningStats] = None,
) -> Tensor:
    """
    Normalize ``x`` per channel (last axis). In training mode the statistics
    come from the batch (every axis but the last) and, when ``running`` is
    given, are folded into it as ``momentum * old + (1 - momentum) * batch``.
    In inference mode ``running`` is used as is.

    :raises StatisticsError: If fewer than 2 values per channel are available
        in training mode, or inference is requested without running statistics
    """
    axes = tuple(range(x.ndim - 1))
    count = x.size // x.shape[-1]
    if training:
        if count < 2:
            raise StatisticsError(
                f"batch statistics need at least 2 values, got {count}"
            )
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running is not None:
            running.mean = momentum * running.mean + (1.0 - momentum) * mu
            unbiased = var * count / (count - 1)
            running.var = momentum * running.var + (1.0 - momentum) * unbiased
    elif running is None:
        raise StatisticsError("inference mode needs running statistics")
    else:
        mu, var = running.mean, running.var

    inv_std = 1.0 / np.sqrt(var + BN_EPSILON)
    x_hat = (x.data - mu) * inv_std
    out = x_hat * gamma.data + beta.data

    def _backward(grad):
        grad_hat = grad * gamma.data
        if training:
            grad_x = (
                inv_std
                / count
                * (
                    count * grad_hat
                    - grad_hat.sum(axis=axes)
                    - x_hat * (grad_hat * x_hat).sum(axis=axes)
                )
            )
        else:
            grad_x = grad_hat * inv_std
        return grad_x, (grad * x_hat).sum(axis=axes), grad.sum(axis=axes)

    return record(out, (x, gamma, beta), _backward, "batchnorm")


def _interpolation_matrix(src: int, dst: int) -> np.ndarray:
    weights = np.zeros((dst, src))
    if src == 1:
        weights[:, 0] = 1.0
        return weights
    positions = np.arange(dst) * ((src - 1) / (dst - 1)) if dst > 1 else np.zeros(1)
    low = np.minimum(np.floor(positions).astype(int), src - 2)
    frac = positions - low
    rows = np.arange(dst)
    weights[rows, low] += 1.0 - frac
    weights[rows, low + 1] += frac

    return weights


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """
    Bilinear resampling of ``x[B,H,W,C]`` with aligned corners: output pixel
    ``i`` reads source position ``i * (H - 1) / (out_h - 1)``.

    :raises DimensionError: On a non-image input or a non-positive size
    """
    if x.ndim != 4 or out_h < 1 or out_w < 1:
        raise DimensionError(f"cannot resize {x.shape} to {out_h}x{out_w}")
    rows = _interpolation_matrix(x.shape[1], out_h)
    cols = _interpolation_matrix(x.shape[2], out_w)
    out = np.einsum("oh,bhwc,pw->bopc", rows, x.data, cols, optimize=True)

    def _backward(grad):
        return (np.einsum("oh,bopc,pw->bhwc", rows, grad, cols, optimize=True),)

    return record(out, (x,), _backward, "resize_bilinear")


def grad_check(
    f: Callable[[Tensor], Tensor], x: TensorLike, eps: float = 1e-4
) -> float:
    """
    Compare the analytic gradient of the scalar function ``f`` at ``x`` with
    central finite differences

    :raises NumericError: If either gradient contains non-finite values

    :return: max over elements of ``|analytic - numeric| / max(1, |numeric|)``
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=DTYPE)
    variable = Tensor(base, requires_grad=True)
    backward(f(variable))
    analytic = variable.grad

    numeric = np.empty_like(base)
    for index in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[index] += eps
        minus[index] -= eps
        difference = f(Tensor(plus)).item() - f(Tensor(minus)).item()
        numeric[index] = difference / (2.0 * eps)

    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        raise NumericError("gradient check produced non-finite values")
    error = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    LOGGER.debug(
        "gradient check over %d elements: max rel. err %.3e", base.size, error.max()
    )

    return float(error.max())
