"""Constrained Bayesian optimization with the EICB acquisition and HLGP constraint surrogates."""

__version__ = "0.1.0"
