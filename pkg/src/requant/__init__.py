"""Requantization degradation of band-limited Gaussian signals."""
__version__ = "0.1.0"
