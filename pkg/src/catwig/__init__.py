"""Wigner-function images of cat and coherent states, classified by numpy CNNs."""

__version__ = "0.1.0"
