"""Workbench for static plasma-equilibrium symmetry analysis and exact
anisotropic equilibria: a small exact expression kernel, a point-symmetry
determining-equation engine, finite-difference field verification, the
localized spherical-vortex equilibrium and its anisotropic transforms, and
flux-function solvers for axially and helically symmetric configurations.
"""

__version__ = "0.1.0"
