"""
PATrack Observability - Activation probes.

capture_activations() opens a recorder for the current thread; model code calls
record(name, array) at interesting points. With no recorder open, record() is a
no-op.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from collections.abc import Iterator
from contextlib import contextmanager

import numpy as np

_local = threading.local()


class ActivationRecorder:
    def __init__(self, prefixes: tuple[str, ...] = ()):
        self.prefixes = prefixes
        self.records: dict[str, list[np.ndarray]] = defaultdict(list)

    def wants(self, name: str) -> bool:
        return not self.prefixes or name.startswith(self.prefixes)

    def __getitem__(self, name: str) -> list[np.ndarray]:
        return self.records[name]

    def __contains__(self, name: str) -> bool:
        return name in self.records


@contextmanager
def capture_activations(*prefixes: str) -> Iterator[ActivationRecorder]:
    recorder = ActivationRecorder(tuple(prefixes))
    previous = getattr(_local, "recorder", None)
    _local.recorder = recorder
    try:
        yield recorder
    finally:
        _local.recorder = previous


def record(name: str, value: np.ndarray) -> None:
    recorder: ActivationRecorder | None = getattr(_local, "recorder", None)
    if recorder is not None and recorder.wants(name):
        recorder.records[name].append(np.array(value, copy=True))
