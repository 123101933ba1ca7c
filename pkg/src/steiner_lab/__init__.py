"""Numerical laboratory for continuous Steiner symmetrization and steady 2D Euler flows."""

__version__ = "0.1.0"
