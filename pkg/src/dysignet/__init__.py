"""Continuous-time representation learning for dynamic signed networks."""

__version__ = "0.1.0"
