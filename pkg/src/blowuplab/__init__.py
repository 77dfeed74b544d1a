"""Finite-time blow-up toolkit for a radial flux-limited chemotaxis model."""

__version__ = "0.1.0"
