"""Gradient descent on deep matrix factorization at and beyond the edge of stability."""

__version__ = "0.1.0"
