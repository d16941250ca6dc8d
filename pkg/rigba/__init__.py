"""Constrained bundle adjustment for rigidly coupled two-camera rigs."""

__version__ = "0.1.0"
