"""Spatial cross-validation methods and a simulation harness to compare them."""

__version__ = "0.1.0"
