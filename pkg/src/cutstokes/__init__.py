"""Stabilized unfitted discontinuous Galerkin solver for the Stokes problem."""

__version__ = "0.1.0"
