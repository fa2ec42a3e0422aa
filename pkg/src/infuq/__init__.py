"""Closed-form uncertainty quantification for infinitely wide networks, with finite-width checks."""

__version__ = "0.1.0"
