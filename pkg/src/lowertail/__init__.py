"""Simulation and verification toolkit for lower-tail large deviations of
geometric functionals of Poisson processes on the unit torus."""
from .kernels import BACKEND

__version__ = "0.1.0"
