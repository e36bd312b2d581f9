"""Symmetries and nonconservative constants of motion for optimal control problems."""

__version__ = "0.1.0"
