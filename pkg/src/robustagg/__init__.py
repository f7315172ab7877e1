"""Robust secure in-network aggregation: protocol library and simulator."""

__version__ = "0.1.0"
