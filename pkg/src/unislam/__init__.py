"""Unified filtering and smoothing back-ends on manifolds."""

__version__ = "0.1.0"
