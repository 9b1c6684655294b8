"""Lattice simulator and verification harness for reduced spin-system dynamics.

Subpackages: lie (group kernel), lattice (periodic calculus), fields
(gauge-geometric operators), lagrangian (densities and derivatives), dynamics
(time integration and residual monitors), cli (entry point).
"""

__version__ = "0.1.0"
