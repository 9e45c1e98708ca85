"""
PATrack Core - Differentiable operations.

Every public function here builds a Function node on the active GradTape.
Shapes must match exactly; the only scalar operands are `scale` and `shift`.
Convolution is cross-correlation (no kernel flip).
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from patrack.core.tensor import Function, Tensor
from patrack.exceptions import ConfigurationException, DimensionException, UsageException

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715

ElementwiseKind = Literal["add", "sub", "mul", "div", "scale", "shift", "gelu", "relu", "sigmoid"]


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionException(op, a.shape, b.shape)


# =============================================================================
# Linear algebra
# =============================================================================


class MatMul(Function):
    name = "matmul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim < 2 or b.ndim != a.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
            raise DimensionException(self.name, a.shape, b.shape)
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad @ np.swapaxes(self.b, -1, -2), np.swapaxes(self.a, -1, -2) @ grad


class Linear(Function):
    """x @ w + b with the bias repeated over rows."""

    name = "linear"

    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
            raise DimensionException(self.name, x.shape, w.shape, b.shape)
        self.x, self.w = x, w
        return x @ w + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return grad @ self.w.T, self.x.T @ grad, grad.sum(axis=0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if b is None:
        return MatMul.apply(x, w)
    return Linear.apply(x, w, b)


# =============================================================================
# Elementwise
# =============================================================================


class Add(Function):
    name = "add"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(self.name, a, b)
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, grad


class Sub(Function):
    name = "sub"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(self.name, a, b)
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, -grad


class Mul(Function):
    name = "mul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad * self.b, grad * self.a


class Div(Function):
    name = "div"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(self.name, a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad / self.b, -grad * self.a / (self.b * self.b)


class Scale(Function):
    name = "scale"

    def forward(self, x: np.ndarray, factor: float = 1.0) -> np.ndarray:
        self.factor = factor
        return x * factor

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.factor,)


class Shift(Function):
    name = "shift"

    def forward(self, x: np.ndarray, offset: float = 0.0) -> np.ndarray:
        return x + offset

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad,)


class Gelu(Function):
    """Tanh approximation of GELU."""

    name = "gelu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        self.t = np.tanh(_GELU_K * (x + _GELU_C * x * x * x))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x, t = self.x, self.t
        du = _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)


class Relu(Function):
    name = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.where(self.mask, grad, 0.0),)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.y * (1.0 - self.y),)


class LogSigmoid(Function):
    name = "log_sigmoid"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return -np.logaddexp(0.0, -x)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * 0.5 * (1.0 + np.tanh(-0.5 * self.x)),)


class Abs(Function):
    name = "abs"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.sign,)


class Maximum(Function):
    name = "maximum"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(self.name, a, b)
        self.take_a = a >= b
        return np.where(self.take_a, a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.where(self.take_a, grad, 0.0), np.where(self.take_a, 0.0, grad)


class Minimum(Function):
    name = "minimum"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(self.name, a, b)
        self.take_a = a <= b
        return np.where(self.take_a, a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.where(self.take_a, grad, 0.0), np.where(self.take_a, 0.0, grad)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return Div.apply(a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def shift(x: Tensor, offset: float) -> Tensor:
    return Shift.apply(x, offset=float(offset))


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def log_sigmoid(x: Tensor) -> Tensor:
    return LogSigmoid.apply(x)


def absolute(x: Tensor) -> Tensor:
    return Abs.apply(x)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    return Maximum.apply(a, b)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    return Minimum.apply(a, b)


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "maximum": maximum, "minimum": minimum}
_UNARY = {"gelu": gelu, "relu": relu, "sigmoid": sigmoid}


def elementwise(kind: str, *operands: Tensor | float) -> Tensor:
    """Dispatch a pointwise operation by name."""
    if kind in _BINARY:
        a, b = operands
        return _BINARY[kind](a, b)  # type: ignore[arg-type]
    if kind in _UNARY:
        (x,) = operands
        return _UNARY[kind](x)  # type: ignore[arg-type]
    if kind == "scale":
        x, factor = operands
        return scale(x, float(factor))  # type: ignore[arg-type]
    if kind == "shift":
        x, offset = operands
        return shift(x, float(offset))  # type: ignore[arg-type]
    raise UsageException(f"unknown elementwise kind '{kind}'")


# =============================================================================
# Reductions and normalization
# =============================================================================


class Sum(Function):
    name = "sum"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.full(self.shape, grad, dtype=grad.dtype),)


class Mean(Function):
    name = "mean"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.asarray(x.mean())

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        n = max(int(np.prod(self.shape)), 1)
        return (np.full(self.shape, grad / n, dtype=grad.dtype),)


class LayerNorm(Function):
    name = "layer_norm"

    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
        if eps <= 0:
            raise ConfigurationException("layer_norm eps must be positive", key="eps")
        if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise DimensionException(self.name, x.shape, gamma.shape, beta.shape)
        mu = x.mean(axis=1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.x_hat = centered * self.inv_std
        self.gamma = gamma
        return self.x_hat * gamma + beta

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g_hat = grad * self.gamma
        mean_g = g_hat.mean(axis=1, keepdims=True)
        mean_gx = (g_hat * self.x_hat).mean(axis=1, keepdims=True)
        gx = self.inv_std * (g_hat - mean_g - self.x_hat * mean_gx)
        return gx, (grad * self.x_hat).sum(axis=0), grad.sum(axis=0)


class Softmax(Function):
    name = "softmax"

    def forward(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        if not -x.ndim <= axis < x.ndim:
            raise UsageException(f"softmax axis {axis} out of range for shape {x.shape}")
        self.axis = axis
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.y = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        inner = (grad * self.y).sum(axis=self.axis, keepdims=True)
        return (self.y * (grad - inner),)


def sum_all(x: Tensor) -> Tensor:
    return Sum.apply(x)


def mean_all(x: Tensor) -> Tensor:
    return Mean.apply(x)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


# =============================================================================
# Shape manipulation
# =============================================================================


class Reshape(Function):
    name = "reshape"

    def forward(self, x: np.ndarray, shape: tuple[int, ...] = ()) -> np.ndarray:
        if int(np.prod(shape)) != x.size:
            raise DimensionException(self.name, x.shape, shape)
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, x: np.ndarray, axes: tuple[int, ...] = ()) -> np.ndarray:
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(np.transpose(x, axes))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.transpose(grad, self.inverse),)


class Concat(Function):
    name = "concat"

    def forward(self, *xs: np.ndarray, axis: int = 0) -> np.ndarray:
        ref = xs[0]
        for x in xs[1:]:
            if x.ndim != ref.ndim or any(
                x.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != axis % ref.ndim
            ):
                raise DimensionException(self.name, ref.shape, x.shape)
        self.axis = axis
        self.bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return np.concatenate(xs, axis=axis)

    def backward(self, grad: np.ndarray) -> list[np.ndarray]:
        return np.split(grad, self.bounds, axis=self.axis)


class Slice(Function):
    name = "slice"

    def forward(self, x: np.ndarray, key: tuple[slice, ...] = ()) -> np.ndarray:
        self.in_shape = x.shape
        self.key = key
        return np.ascontiguousarray(x[key])

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(self.in_shape, dtype=grad.dtype)
        full[self.key] = grad
        return (full,)


class Gather(Function):
    """Pick elements by flat row-major index."""

    name = "gather"

    def forward(self, x: np.ndarray, indices: np.ndarray | None = None) -> np.ndarray:
        self.in_shape = x.shape
        self.indices = np.asarray(indices, dtype=np.int64)
        return x.reshape(-1)[self.indices]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        flat = np.zeros(int(np.prod(self.in_shape)), dtype=grad.dtype)
        np.add.at(flat, self.indices, grad)
        return (flat.reshape(self.in_shape),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(int(s) for s in shape))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    return Transpose.apply(x, axes=tuple(axes))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if len(xs) == 1:
        return xs[0]
    return Concat.apply(*xs, axis=axis)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    key = [slice(None)] * x.ndim
    key[axis] = slice(start, stop)
    return Slice.apply(x, key=tuple(key))


def gather(x: Tensor, indices: Sequence[int] | np.ndarray) -> Tensor:
    return Gather.apply(x, indices=np.asarray(indices, dtype=np.int64))


# =============================================================================
# Spatial operations on C x H x W maps
# =============================================================================


def _out_extent(size: int, kernel: int, stride: int, padding: int, op: str, shape: tuple[int, ...]) -> int:
    padded = size + 2 * padding
    if kernel > padded:
        raise DimensionException(op, shape, (kernel, kernel), reason="kernel larger than padded input")
    return (padded - kernel) // stride + 1


def _windows(xp: np.ndarray, kernel: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    win = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))
    return win[:, ::stride, ::stride][:, :h_out, :w_out]


def _scatter_windows(
    dwin: np.ndarray, padded_shape: tuple[int, ...], kernel: int, stride: int, dtype: np.dtype
) -> np.ndarray:
    """Adjoint of _windows: add (C, h, w, k, k) window gradients back onto the padded map."""
    out = np.zeros(padded_shape, dtype=dtype)
    _, h_out, w_out = dwin.shape[:3]
    for i in range(kernel):
        for j in range(kernel):
            rows = slice(i, i + stride * (h_out - 1) + 1, stride)
            cols = slice(j, j + stride * (w_out - 1) + 1, stride)
            out[:, rows, cols] += dwin[:, :, :, i, j]
    return out


class Conv2d(Function):
    name = "conv2d"

    def forward(
        self,
        x: np.ndarray,
        w: np.ndarray,
        b: np.ndarray | None = None,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
    ) -> np.ndarray:
        if x.ndim != 3 or w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise DimensionException(self.name, x.shape, w.shape)
        c_in, height, width = x.shape
        c_out, cin_g, kernel, _ = w.shape
        if groups < 1 or c_in % groups or c_out % groups:
            raise ConfigurationException(
                f"conv2d groups={groups} must divide C_in={c_in} and C_out={c_out}", key="groups"
            )
        if cin_g != c_in // groups:
            raise DimensionException(self.name, x.shape, w.shape, reason="kernel input channels")
        if padding > 0 and kernel % 2 == 0:
            raise ConfigurationException("padded convolution needs an odd kernel extent", key="kernel")
        if b is not None and b.shape != (c_out,):
            raise DimensionException(self.name, w.shape, b.shape, reason="bias extent")
        h_out = _out_extent(height, kernel, stride, padding, self.name, x.shape)
        w_out = _out_extent(width, kernel, stride, padding, self.name, x.shape)

        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
        win = _windows(xp, kernel, stride, h_out, w_out)
        cout_g = c_out // groups
        self.cols: list[np.ndarray] = []
        out = np.empty((c_out, h_out, w_out), dtype=x.dtype)
        for g in range(groups):
            cols = win[g * cin_g : (g + 1) * cin_g].transpose(1, 2, 0, 3, 4).reshape(h_out * w_out, -1)
            w_g = w[g * cout_g : (g + 1) * cout_g].reshape(cout_g, -1)
            out[g * cout_g : (g + 1) * cout_g] = (cols @ w_g.T).T.reshape(cout_g, h_out, w_out)
            self.cols.append(cols)
        if b is not None:
            out += b[:, None, None]
        self.w = w
        self.has_bias = b is not None
        self.geometry = (c_in, height, width, kernel, stride, padding, groups, h_out, w_out, xp.shape)
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        c_in, height, width, kernel, stride, padding, groups, h_out, w_out, padded_shape = self.geometry
        c_out, cin_g = self.w.shape[:2]
        cout_g = c_out // groups
        gw = np.empty_like(self.w)
        dwin = np.empty((c_in, h_out, w_out, kernel, kernel), dtype=grad.dtype)
        for g in range(groups):
            g_out = grad[g * cout_g : (g + 1) * cout_g].reshape(cout_g, -1)
            w_g = self.w[g * cout_g : (g + 1) * cout_g].reshape(cout_g, -1)
            gw[g * cout_g : (g + 1) * cout_g] = (g_out @ self.cols[g]).reshape(cout_g, cin_g, kernel, kernel)
            dcols = (g_out.T @ w_g).reshape(h_out, w_out, cin_g, kernel, kernel)
            dwin[g * cin_g : (g + 1) * cin_g] = dcols.transpose(2, 0, 1, 3, 4)
        dxp = _scatter_windows(dwin, padded_shape, kernel, stride, grad.dtype)
        gx = dxp[:, padding : padding + height, padding : padding + width]
        if self.has_bias:
            return gx, gw, grad.sum(axis=(1, 2))
        return gx, gw


class Pool2d(Function):
    name = "pool2d"

    def forward(
        self,
        x: np.ndarray,
        kind: str = "max",
        kernel: int = 2,
        stride: int = 2,
        padding: int = 0,
    ) -> np.ndarray:
        if x.ndim != 3:
            raise DimensionException(self.name, x.shape, reason="expected C x H x W")
        if kind not in ("max", "avg"):
            raise UsageException(f"unknown pool kind '{kind}'")
        _, height, width = x.shape
        h_out = _out_extent(height, kernel, stride, padding, self.name, x.shape)
        w_out = _out_extent(width, kernel, stride, padding, self.name, x.shape)
        fill = -np.inf if kind == "max" else 0.0
        xp = (
            np.pad(x, ((0, 0), (padding, padding), (padding, padding)), constant_values=fill)
            if padding
            else x
        )
        win = _windows(xp, kernel, stride, h_out, w_out)
        self.kind = kind
        self.geometry = (height, width, kernel, stride, padding, h_out, w_out, xp.shape)
        if kind == "avg":
            return win.mean(axis=(3, 4))
        flat = win.reshape(win.shape[0], h_out, w_out, kernel * kernel)
        self.argmax = flat.argmax(axis=3)
        return np.take_along_axis(flat, self.argmax[..., None], axis=3)[..., 0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        height, width, kernel, stride, padding, h_out, w_out, padded_shape = self.geometry
        if self.kind == "avg":
            dwin = np.broadcast_to(
                (grad / (kernel * kernel))[..., None, None], grad.shape + (kernel, kernel)
            )
        else:
            onehot = np.zeros(grad.shape + (kernel * kernel,), dtype=grad.dtype)
            np.put_along_axis(onehot, self.argmax[..., None], grad[..., None], axis=3)
            dwin = onehot.reshape(grad.shape + (kernel, kernel))
        dxp = _scatter_windows(dwin, padded_shape, kernel, stride, grad.dtype)
        return (dxp[:, padding : padding + height, padding : padding + width],)


class UpsampleNearest(Function):
    name = "upsample_nearest2d"

    def forward(self, x: np.ndarray, factor: int = 1) -> np.ndarray:
        if factor < 1:
            raise ConfigurationException("upsample factor must be >= 1", key="factor")
        if x.ndim != 3:
            raise DimensionException(self.name, x.shape, reason="expected C x H x W")
        self.factor = factor
        return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        c, h, w = grad.shape
        f = self.factor
        return (grad.reshape(c, h // f, f, w // f, f).sum(axis=(2, 4)),)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    if bias is None:
        return Conv2d.apply(x, weight, stride=stride, padding=padding, groups=groups)
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding, groups=groups)


def pool2d(x: Tensor, kind: str, kernel: int, stride: int, padding: int = 0) -> Tensor:
    return Pool2d.apply(x, kind=kind, kernel=kernel, stride=stride, padding=padding)


def upsample_nearest2d(x: Tensor, factor: int) -> Tensor:
    return UpsampleNearest.apply(x, factor=int(factor))
