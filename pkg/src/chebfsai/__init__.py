"""Block-FSAI, Chebyshev smoothers and multilevel PUM solvers."""

__version__ = "0.1.0"
