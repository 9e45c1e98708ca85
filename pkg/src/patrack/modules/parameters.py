"""
PATrack Modules - Parameter trees.

Weight records are dataclasses whose fields are Tensors, nested records,
lists of records, or None. These helpers flatten them to dotted names.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Iterator
from typing import Any

import numpy as np

from patrack.core.rng import Rng
from patrack.core.tensor import Tensor


def iter_named(obj: Any, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    if obj is None:
        return
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            if f.metadata.get("static"):
                continue
            yield from iter_named(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, dict):
        for key in sorted(obj):
            yield from iter_named(obj[key], f"{prefix}.{key}" if prefix else str(key))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from iter_named(item, f"{prefix}.{i}" if prefix else str(i))


def named_tensors(obj: Any, prefix: str = "") -> dict[str, Tensor]:
    return dict(iter_named(obj, prefix))


def count(obj: Any) -> int:
    return sum(t.size for _, t in iter_named(obj))


def param(rng: Rng, shape: tuple[int, ...], dtype: np.dtype | type, std: float = 0.02) -> Tensor:
    """Truncated-normal projection weight."""
    return Tensor(rng.truncated_normal_array(shape, std=std).astype(dtype), requires_grad=True)


def zeros_param(shape: tuple[int, ...], dtype: np.dtype | type) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape: tuple[int, ...], dtype: np.dtype | type) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def up_param(rng: Rng, shape: tuple[int, ...], dtype: np.dtype | type, up_std: float | None) -> Tensor:
    """Adapter up-projection: zero unless up_std is set."""
    return param(rng, shape, dtype, std=up_std) if up_std else zeros_param(shape, dtype)
