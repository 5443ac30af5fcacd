"""Finite element solver and convergence-study harness for incompressible
flow with variable density.

Subpackages: mesh generation, quadrature, finite element spaces, form
assembly, sparse solvers, projection operators, the decoupled time stepper,
manufactured solutions, and the convergence harness/CLI.
"""

__version__ = "0.1.0"
