"""Delay-Doppler OTFS channel estimation with nonparametric Bayesian learning."""

__version__ = "0.1.0"
