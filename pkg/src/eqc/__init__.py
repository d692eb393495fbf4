"""Simulation and coding toolkit for the erasure queue-channel (EQC)."""

__version__ = "0.1.0"
