"""Distributed multi-objective energy management for prosumer microgrids."""

__version__ = "0.1.0"
