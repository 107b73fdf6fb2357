"""Numerical laboratory for resonances of random highly oscillatory potentials."""

__version__ = "0.1.0"
