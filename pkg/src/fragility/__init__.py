"""Fragility Index metrics and fragility-minimizing classifier training."""

__version__ = "0.1.0"
