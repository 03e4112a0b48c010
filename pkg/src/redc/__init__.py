"""Rateless-coded distributed matrix multiplication: coding, decoding, scheduling, simulation."""

__version__ = "0.1.0"
