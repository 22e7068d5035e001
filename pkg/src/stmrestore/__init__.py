"""Patch-based sparse-coding restoration of scanning-probe images."""

__version__ = "0.1.0"
