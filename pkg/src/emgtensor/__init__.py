"""Bayesian inverse EMG with parameter-dependent solutions in hierarchical Tucker format."""

__version__ = "0.1.0"
