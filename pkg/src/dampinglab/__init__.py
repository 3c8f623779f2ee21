"""Numerical laboratory for linear and nonlinear Euler flows with time-growing damping."""

__version__ = "0.1.0"
