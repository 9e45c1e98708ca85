"""
PATrack Synth Module.

Deterministic RGB + {thermal, depth, event} sequence generator, degradations
and the on-disk dataset layout.
"""
