"""Exceptional-point sensing of minimal-length corrections in coupled optomechanical resonators."""

__version__ = "0.1.0"
