"""
PATrack Pipeline Module.

Model assembly (base and dual-stream), window cropping, the two-phase
training protocol and sequence inference.
"""
