"""Geometric memory control for long-horizon camera-conditioned video generation."""

__version__ = "0.1.0"
