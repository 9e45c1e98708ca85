"""
PATrack Training Metrics Store.

In-process collection of training progress:
- per-epoch mean loss and learning rate
- step latencies (percentiles)
- error counts by PatrackException.code

Thread-safe via a lock.
"""

from __future__ import annotations

import statistics
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from typing import Any


@dataclass
class EpochRecord:
    """Loss and lr for one epoch."""

    epoch: int
    lr: float
    losses: list[float] = field(default_factory=list)

    @property
    def mean_loss(self) -> float:
        return statistics.fmean(self.losses) if self.losses else float("nan")

    def to_dict(self) -> dict[str, Any]:
        return {"epoch": self.epoch, "lr": self.lr, "steps": len(self.losses), "mean_loss": self.mean_loss}


@dataclass
class StepTimings:
    latencies_ms: list[float] = field(default_factory=list)

    # Keep last N latencies to avoid unbounded memory
    MAX_LATENCIES = 1000

    def record(self, ms: float) -> None:
        self.latencies_ms.append(ms)
        if len(self.latencies_ms) > self.MAX_LATENCIES:
            self.latencies_ms = self.latencies_ms[-self.MAX_LATENCIES :]

    def get_percentiles(self) -> dict[str, float]:
        if not self.latencies_ms:
            return {}
        ordered = sorted(self.latencies_ms)
        n = len(ordered)
        return {
            "p50_ms": ordered[int(n * 0.5)],
            "p90_ms": ordered[int(n * 0.9)],
            "max_ms": ordered[-1],
            "mean_ms": statistics.fmean(ordered),
        }


class TrainingMetrics:
    """Accumulates per-epoch losses, step timings and error counts for one run."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._epochs: dict[int, EpochRecord] = {}
        self._timings = StepTimings()
        self._errors: dict[str, int] = defaultdict(int)
        self._started_at = datetime.now(timezone.utc)

    def start_epoch(self, epoch: int, lr: float) -> None:
        with self._lock:
            self._epochs[epoch] = EpochRecord(epoch=epoch, lr=lr)

    def record_step(self, epoch: int, loss: float, ms: float) -> None:
        with self._lock:
            record = self._epochs.setdefault(epoch, EpochRecord(epoch=epoch, lr=float("nan")))
            record.losses.append(loss)
            self._timings.record(ms)

    def record_error(self, code: str) -> None:
        with self._lock:
            self._errors[code] += 1

    def epochs(self) -> list[EpochRecord]:
        with self._lock:
            return [self._epochs[e] for e in sorted(self._epochs)]

    def epoch_losses(self) -> list[float]:
        with self._lock:
            return [self._epochs[e].mean_loss for e in sorted(self._epochs)]

    def get_summary(self) -> dict[str, Any]:
        with self._lock:
            now = datetime.now(timezone.utc)
            return {
                "elapsed_seconds": round((now - self._started_at).total_seconds(), 1),
                "epochs": [self._epochs[e].to_dict() for e in sorted(self._epochs)],
                "steps": self._timings.get_percentiles(),
                "errors": dict(self._errors),
            }

    def reset(self) -> None:
        with self._lock:
            self._epochs.clear()
            self._timings = StepTimings()
            self._errors.clear()
            self._started_at = datetime.now(timezone.utc)


@lru_cache(maxsize=1)
def get_training_metrics() -> TrainingMetrics:
    """Process-wide store used by the CLI."""
    return TrainingMetrics()
