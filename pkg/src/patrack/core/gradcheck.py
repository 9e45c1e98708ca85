"""
PATrack Core - Finite-difference gradient checks.

Central differences, (f(x + h e_i) - f(x - h e_i)) / 2h, compared against
the tape gradient. Run in float64; float32 rounding swamps h = 1e-5.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from patrack.core.rng import Rng
from patrack.core.tensor import GradTape, Tensor, no_grad
from patrack.exceptions import UsageException, VerificationException

DEFAULT_STEP = 1e-5
DEFAULT_FLOOR = 1e-8

GradHook = Callable[[dict[str, np.ndarray]], None]


def _scalar(value: Tensor) -> float:
    if value.size != 1:
        raise UsageException(f"gradient check needs a scalar function, got shape {value.shape}")
    return float(value.data.reshape(()))


def finite_diff_at(
    f: Callable[[], Tensor], x: Tensor, index: tuple[int, ...], h: float = DEFAULT_STEP
) -> float:
    """Central difference of f along one coordinate of x (x is perturbed in place and restored)."""
    original = x.data[index].item()
    try:
        with no_grad():
            x.data[index] = original + h
            upper = _scalar(f())
            x.data[index] = original - h
            lower = _scalar(f())
    finally:
        x.data[index] = original
    return (upper - lower) / (2.0 * h)


def finite_diff_gradient(f: Callable[[Tensor], Tensor], x: Tensor, h: float = DEFAULT_STEP) -> Tensor:
    grad = np.zeros_like(x.data)
    for index in np.ndindex(x.shape):
        grad[index] = finite_diff_at(lambda: f(x), x, index, h)
    return Tensor(grad)


def analytic_gradients(f: Callable[[], Tensor], params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.zero_grad()
    with GradTape() as tape:
        loss = f()
        _scalar(loss)
        tape.backward(loss)
    return {
        name: np.zeros_like(p.data) if p.grad is None else np.array(p.grad, copy=True)
        for name, p in params.items()
    }


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); floor keeps near-zero coordinates from dominating."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor + 1e-12)
    return np.abs(analytic - numeric) / denom


@dataclass(frozen=True)
class GradCheckResult:
    component: str
    max_rel_error: float
    tolerance: float
    coordinate: str
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def raise_for_failure(self) -> None:
        if not self.passed:
            raise VerificationException(self.component, self.max_rel_error, self.tolerance, self.coordinate)

    def to_dict(self) -> dict[str, object]:
        return {
            "component": self.component,
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "coordinate": self.coordinate,
            "samples": self.samples,
            "passed": self.passed,
        }


def sample_coordinates(
    params: Mapping[str, Tensor], samples: int, rng: Rng
) -> list[tuple[str, tuple[int, ...]]]:
    """`samples` distinct (name, index) pairs drawn uniformly over all scalars, or every pair if fewer."""
    names = sorted(params)
    sizes = np.array([params[n].size for n in names], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    flat = range(total) if samples >= total else sorted(rng.permutation(total)[:samples])
    coords = []
    for k in flat:
        i = int(np.searchsorted(offsets, k, side="right") - 1)
        shape = params[names[i]].shape
        coords.append((names[i], tuple(int(v) for v in np.unravel_index(k - offsets[i], shape))))
    return coords


def check_gradients(
    component: str,
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    samples: int,
    tolerance: float,
    rng: Rng,
    h: float = DEFAULT_STEP,
    hook: GradHook | None = None,
    floor: float = DEFAULT_FLOOR,
    scaled_floor: float = 0.0,
) -> GradCheckResult:
    """Compare tape gradients with central differences at sampled coordinates of `params`.

    The relative-error denominator never drops below `floor`, nor below `scaled_floor` times
    the largest gradient magnitude in the sample.
    """
    if not params:
        raise UsageException(f"no parameters to check for {component}")
    analytic = analytic_gradients(f, params)
    if hook is not None:
        hook(analytic)
    coords = sample_coordinates(params, samples, rng)
    a = np.array([analytic[name][index] for name, index in coords])
    n = np.array([finite_diff_at(f, params[name], index, h) for name, index in coords])
    largest = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))))
    errors = relative_error(a, n, max(floor, scaled_floor * largest))
    worst = int(np.argmax(errors))
    name, index = coords[worst]
    return GradCheckResult(
        component=component,
        max_rel_error=float(errors[worst]),
        tolerance=tolerance,
        coordinate=f"{name}{list(index)}",
        samples=len(coords),
    )
