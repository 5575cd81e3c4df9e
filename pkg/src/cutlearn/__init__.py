"""Calibrated cutting simulation, compliance control and RL slicing policies."""

__version__ = "0.1.0"
