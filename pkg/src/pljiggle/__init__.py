"""Jiggling of piecewise maps and triangulations over crystalline subdivisions."""

__version__ = "0.1.0"
