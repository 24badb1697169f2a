"""Contention resolution on a shared channel without collision detection."""

__version__ = "0.1.0"
