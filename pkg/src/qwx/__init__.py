"""Measurement-based quantum work extraction: simulation and checks."""

__version__ = "0.1.0"
