"""Iterated-logarithm harness: geometric-scale statistics over seeded paths."""
from .config import LilConfig
from .engine import LilEngine, phi_ratio_bounds
from .report import LilReport

__all__ = ["LilConfig", "LilEngine", "LilReport", "phi_ratio_bounds"]
