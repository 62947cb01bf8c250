"""Low-rank projected Newton-Kleinman solvers for large algebraic Riccati equations."""

__version__ = "0.1.0"
