"""Resistance forms, harmonic coordinates and Kusuoka measures on finitely ramified fractals."""

__version__ = "0.1.0"
