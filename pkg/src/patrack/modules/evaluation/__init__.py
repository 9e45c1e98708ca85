"""
PATrack Evaluation Module.

Tracking metrics (PR, SR, NPR, Pr/Re/F, attribute breakdown), image entropy
and report emission.
"""
