"""Spectral-Galerkin simulator and diagnostics for the small-mass stochastic damped wave equation"""

__version__ = "1.0.0"
__author__ = "smallmass developers"
__description__ = "Damped stochastic wave dynamics, their small-mass limit and ergodicity probes"
