"""Delayed and immediate stability switches in slow-fast quadratic predator-prey systems."""

__version__ = "0.1.0"
