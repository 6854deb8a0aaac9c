"""Numerical toolkit for pseudo-event regulated video moment retrieval."""

__version__ = "0.1.0"
