"""Listwise preference optimization toolkit for small diffusion models."""

__version__ = "0.1.0"
