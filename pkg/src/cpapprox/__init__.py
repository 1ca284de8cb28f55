"""Numerical toolkit for state-preserving completely positive approximations
on the discretized homogeneous algebra M_n (x) C[0, 1]."""

__version__ = "0.1.0"
