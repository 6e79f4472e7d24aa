"""Numerical laboratory for the geometrically nonlinear Cosserat micropolar energy."""

__version__ = "0.1.0"
