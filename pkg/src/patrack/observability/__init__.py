"""
PATrack Observability Module.

Structured logging setup, the training metrics store and activation probes.
"""

from patrack.observability.logging import configure_logging
from patrack.observability.metrics import TrainingMetrics, get_training_metrics
from patrack.observability.probes import capture_activations, record

__all__ = ["TrainingMetrics", "capture_activations", "configure_logging", "get_training_metrics", "record"]
