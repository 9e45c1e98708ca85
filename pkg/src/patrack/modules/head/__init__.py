"""
PATrack Head Module.

Center-based prediction head (score / offset / size maps), box decoding and
the training loss.
"""
