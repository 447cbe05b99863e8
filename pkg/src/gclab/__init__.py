"""Numerical laboratory for the interior C^2 estimate of the 2D prescribed
Gauss curvature equation ``det D^2 u = f (1 + |Du|^2)^2``."""

__version__ = "0.1.0"
