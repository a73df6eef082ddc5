"""Numerical laboratory for backward stochastic parabolic PDEs."""

__version__ = "0.1.0"
