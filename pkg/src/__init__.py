"""Numerical lab for anticipating Stratonovich flows and their iterated-logarithm limits."""
__version__ = "0.1.0"
