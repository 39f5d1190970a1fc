"""Fredholm neural networks: forward solvers, kernel learning and potential-based PDE solvers."""

__version__ = "0.1.0"
