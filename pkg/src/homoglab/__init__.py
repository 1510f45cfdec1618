"""Homogenization laboratory for obstacle problems with oscillating coefficients."""

__version__ = "0.1.0"
