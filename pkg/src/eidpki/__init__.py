"""Desk-scale national eID public-key infrastructure."""

__version__ = "0.1.0"
