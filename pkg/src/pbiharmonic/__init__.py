"""Weighted p-biharmonic Rayleigh quotients with a Rellich potential."""

__version__ = "0.1.0"
