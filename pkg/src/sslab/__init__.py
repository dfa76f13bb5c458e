"""Radial self-similar scattering lab."""

__version__ = "0.1.0"
