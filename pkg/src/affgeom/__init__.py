"""Affine chart atlases, flat and metric connections, holonomy, and
Euler-form quadrature."""

__version__ = "0.1.0"
