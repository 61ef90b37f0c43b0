"""Numerical laboratory for the continuous solid-on-solid model and its random-conductance representation."""

__version__ = "0.1.0"
