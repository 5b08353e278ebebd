"""Simulation of extreme fixed-length time series via functional polar decomposition."""

__version__ = "0.1.0"
