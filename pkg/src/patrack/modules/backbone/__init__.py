"""
PATrack Backbone Module.

Shared ViT encoder: patch embedding, pre-LN layers, token/grid utilities.
"""
