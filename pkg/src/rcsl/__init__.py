"""Numerical toolkit for a relativistic collapse model built on smeared event densities."""
__version__ = "0.1.0"
