"""Sparse Bayesian identification of dynamic systems with neural networks."""

__version__ = "0.1.0"
