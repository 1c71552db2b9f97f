"""Discrete-event simulator for fixed-mobile convergence over hybrid access."""

__version__ = "0.1.0"
