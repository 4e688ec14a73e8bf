"""Numerical feasibility checks and fitting for matching-adjusted indirect comparison."""

__version__ = "0.1.0"
