"""
PATrack Adapters Module.

MDA (frequency-split cross-modal adapter), CEA (shared cross-attention
adapter), HA (head bottleneck), placement schedules and accounting.
"""
