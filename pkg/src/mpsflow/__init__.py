"""Projected quantum dynamics on the matrix-product-state manifold."""

__version__ = "0.1.0"
