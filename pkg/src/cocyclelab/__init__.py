"""Numerical tools for linear cocycles over hyperbolic toral automorphisms.

Submodules: :mod:`~cocyclelab.torus` (base dynamics), :mod:`~cocyclelab.cocycle`
(cocycles and iterates), :mod:`~cocyclelab.conformal` (conformal structures),
:mod:`~cocyclelab.holonomy`, :mod:`~cocyclelab.lyapunov`,
:mod:`~cocyclelab.subadditive`, :mod:`~cocyclelab.reduction` and the
command-line runner :mod:`~cocyclelab.cli`.
"""

__version__ = "0.1.0"
