"""Flood / debris-flow simulation and synthetic change-map dataset toolkit."""

__version__ = "0.1.0"
