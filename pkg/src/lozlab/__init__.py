"""Glauber dynamics, limit shapes and exact statistics for lozenge tilings."""

__version__ = "0.1.0"
