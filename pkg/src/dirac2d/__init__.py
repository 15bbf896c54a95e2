"""Pseudospectral simulation and diagnostics for the 2D cubic Dirac equation."""

__version__ = "0.1.0"
