"""High-order Poisson solvers preconditioned by low-order-refined Schwarz multigrid."""

__version__ = "0.1.0"
