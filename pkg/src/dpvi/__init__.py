"""Differentially private variational inference."""

__version__ = "0.1.0"
