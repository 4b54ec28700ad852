"""Concentrating solutions of -eps^2 Delta u + V u = u^p near a weighted-stationary curve."""

__version__ = "0.1.0"
