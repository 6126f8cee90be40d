"""Semigeostrophic flow in dual variables via semi-discrete optimal transport."""
__version__ = "0.1.0"
