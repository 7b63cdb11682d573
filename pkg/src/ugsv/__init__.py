"""Highlight detection and summarisation for user-generated sports video."""
__version__ = "0.1.0"
