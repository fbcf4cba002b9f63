"""Certified reduced-order modelling for snapshots from black-box ODE solvers."""

__version__ = "0.1.0"
