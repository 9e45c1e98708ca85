"""PATrack Modules."""
