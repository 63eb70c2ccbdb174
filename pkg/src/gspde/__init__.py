"""Spectral Galerkin approximation of stochastic Navier-Stokes on the torus,
with stopped-norm diagnostics and Monte-Carlo experiment batches."""

__version__ = "0.1.0"
