"""Gamma-count regression for under- and overdispersed counts."""

__version__ = "0.1.0"
