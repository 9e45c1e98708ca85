"""
PATrack - progressive adapters for multi-modal object tracking.

Desk-scale implementation: numpy autodiff engine, ViT backbone, MDA/CEA/HA
adapters, center head, synthetic RGB+X benchmark and the tracking metric suite.
"""

__version__ = "0.1.0"
