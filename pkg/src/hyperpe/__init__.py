"""Spectral Galerkin simulation and analysis of the stochastic hyperviscous
vorticity equation on [0, 2pi]^2 under its white-noise invariant measure."""

__version__ = "0.1.0"
