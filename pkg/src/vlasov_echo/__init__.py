"""Spectral solvers for phase mixing, Landau damping and plasma echoes on the torus."""

__version__ = "0.1.0"
