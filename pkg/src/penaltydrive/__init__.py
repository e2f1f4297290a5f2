"""Penalty-constrained imitation learning for a toy 2D driving world."""

__version__ = "0.1.0"
