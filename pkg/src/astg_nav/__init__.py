"""Crowd navigation with an attention-based spatial-temporal graph value network."""

__version__ = "0.1.0"
