"""Asynchronous sideways-information-passing solvers for convex empirical risk minimization."""

__version__ = "0.1.0"
