"""Numerical lab for eigenphase densities of magnetic scattering matrices."""

__version__ = "0.1.0"
