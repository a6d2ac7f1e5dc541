"""Bin-and-delta 3D rotation estimation."""

__version__ = "0.1.0"
