"""Bayesian evidence synthesis for epidemic severity and transmission."""

__version__ = "0.1.0"
