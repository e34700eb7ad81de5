"""Numerical laboratory for stochastic homogenization of non-coercive
Hamilton-Jacobi equations on Carnot groups."""

__version__ = "0.1.0"
