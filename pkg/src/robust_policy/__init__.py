"""Robust decision policies from observational data with conformal cost limits."""

__version__ = "0.1.0"
