"""Hölder extensions of horizontal curves in the Heisenberg group."""

__version__ = "0.1.0"
