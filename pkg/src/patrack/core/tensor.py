"""
PATrack Core - Tensor and gradient tape.

A dense row-major tensor backed by a numpy array, plus the GradTape that
records differentiable operations in execution order and replays them in
reverse during backward().

Tensors are immutable once produced; only leaf tensors (parameters) have their
data replaced, by the optimizer or the gradient oracle.
"""

from __future__ import annotations

import threading
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from typing import Any

import numpy as np

from patrack.exceptions import DimensionException, NumericFailureException, UsageException

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_state = threading.local()


def _thread_state() -> threading.local:
    if not hasattr(_state, "stack"):
        _state.stack = []
        _state.default = GradTape()
        _state.enabled = True
    return _state


def _debug_numerics() -> bool:
    from patrack.config import get_settings

    return get_settings().debug_numerics


class Tensor:
    """n-dimensional float32/float64 array with optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: str | np.dtype | type | None = None,
        name: str | None = None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in SUPPORTED_DTYPES:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: Function | None = None

    # ------------------------------------------------------------------
    # Metadata
    # ------------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageException(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def assign(self, value: np.ndarray) -> None:
        """Replace the data of a leaf tensor (optimizer / oracle use only)."""
        if not self.is_leaf:
            raise UsageException("assign() is only allowed on leaf tensors")
        value = np.asarray(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise DimensionException("assign", self.data.shape, value.shape)
        self.data = np.ascontiguousarray(value)

    def astype(self, dtype: str | np.dtype | type) -> Tensor:
        """Return a detached leaf copy in another dtype."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise DimensionException("accumulate_grad", self.data.shape, grad.shape)
        grad = grad.astype(self.data.dtype, copy=False)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    # ------------------------------------------------------------------
    # Operators (no broadcasting; python scalars map to scale/shift)
    # ------------------------------------------------------------------

    def __add__(self, other: Tensor | float) -> Tensor:
        from patrack.core import functional as F

        if isinstance(other, Tensor):
            return F.add(self, other)
        return F.shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other: Tensor | float) -> Tensor:
        from patrack.core import functional as F

        if isinstance(other, Tensor):
            return F.sub(self, other)
        return F.shift(self, -float(other))

    def __rsub__(self, other: float) -> Tensor:
        from patrack.core import functional as F

        return F.shift(F.scale(self, -1.0), float(other))

    def __mul__(self, other: Tensor | float) -> Tensor:
        from patrack.core import functional as F

        if isinstance(other, Tensor):
            return F.mul(self, other)
        return F.scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Tensor | float) -> Tensor:
        from patrack.core import functional as F

        if isinstance(other, Tensor):
            return F.div(self, other)
        return F.scale(self, 1.0 / float(other))

    def __neg__(self) -> Tensor:
        from patrack.core import functional as F

        return F.scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        from patrack.core import functional as F

        return F.matmul(self, other)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{grad})"


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement forward() on raw arrays and backward(), which maps the
    gradient of the output to one gradient (or None) per input.
    """

    name = "op"

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.output: Tensor | None = None
        self.tape: GradTape | None = None

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__}.forward")

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError(f"{type(self).__name__}.backward")

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        dtype = inputs[0].dtype
        for t in inputs[1:]:
            if t.dtype != dtype:
                raise DimensionException(
                    cls.name, inputs[0].shape, t.shape, reason=f"dtype mismatch {dtype.name}/{t.dtype.name}"
                )
        fn = cls(*inputs)
        data = np.asarray(fn.forward(*(t.data for t in inputs), **kwargs), dtype=dtype)
        if _debug_numerics() and np.isnan(data).any():
            if all(np.isfinite(t.data).all() for t in inputs):
                raise NumericFailureException(
                    f"{cls.name} produced NaN from finite inputs",
                    details={"op": cls.name, "shapes": [list(t.shape) for t in inputs]},
                )
        requires_grad = any(t.requires_grad for t in inputs)
        out = Tensor(data, requires_grad=requires_grad)
        if requires_grad and is_grad_enabled():
            tape = current_tape()
            fn.output = out
            fn.tape = tape
            out._node = fn
            tape.record(fn)
        return out


class GradTape:
    """Ordered record of executed operations; replayed in reverse by backward()."""

    def __init__(self) -> None:
        self._nodes: list[Function] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def __enter__(self) -> GradTape:
        _thread_state().stack.append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _thread_state().stack.pop()

    def record(self, node: Function) -> None:
        self._nodes.append(node)

    def clear(self) -> None:
        for node in self._nodes:
            if node.output is not None:
                node.output._node = None
        self._nodes.clear()

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise UsageException(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss.is_leaf:
            self.clear()
            if not loss.requires_grad:
                raise UsageException("loss is not reachable from any recorded operation")
            loss.accumulate_grad(np.ones_like(loss.data))
            return

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            out = node.output
            if out is None:
                continue
            grad = pending.pop(id(out), None)
            if grad is None:
                continue
            for inp, g in zip(node.inputs, node.backward(grad), strict=True):
                if g is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    inp.accumulate_grad(g)
                else:
                    key = id(inp)
                    pending[key] = pending[key] + g if key in pending else g
        self.clear()


def current_tape() -> GradTape:
    state = _thread_state()
    return state.stack[-1] if state.stack else state.default


def is_grad_enabled() -> bool:
    return bool(_thread_state().enabled)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable operation recording inside the block."""
    state = _thread_state()
    previous = state.enabled
    state.enabled = False
    try:
        yield
    finally:
        state.enabled = previous


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss to every leaf that requires them."""
    tape = loss._node.tape if loss._node is not None and loss._node.tape is not None else current_tape()
    tape.backward(loss)


def tensor(data: Any, requires_grad: bool = False, dtype: str | np.dtype | type | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(
    shape: Sequence[int], dtype: str | np.dtype | type = np.float32, requires_grad: bool = False
) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=dtype), requires_grad=requires_grad)


def ones(
    shape: Sequence[int], dtype: str | np.dtype | type = np.float32, requires_grad: bool = False
) -> Tensor:
    return Tensor(np.ones(tuple(shape), dtype=dtype), requires_grad=requires_grad)
