"""Spherical SK free energy near the spin-glass/paramagnetic transition."""

__version__ = "0.1.0"
