"""Binded-VAE toolkit for sparse compositional data."""

__version__ = "0.1.0"
