"""Bayesian distributionally robust optimization on discrete supports."""

__version__ = "0.1.0"
