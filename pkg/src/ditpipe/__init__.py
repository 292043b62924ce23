"""Sequence-parallel attention engine and inference pipeline simulator."""

__version__ = "0.1.0"
