"""Tests package for Verity MVP."""
