"""Numerical laboratory for beta-ensembles with convex polynomial potentials.

Sample eigenvalue configurations, solve equilibrium problems, evaluate the
large-deviation rate functionals of the spectrum seen from its rightmost
particle, and run convergence and fluctuation experiments at desk scale.
"""

__version__ = "0.1.0"

from .measures import AtomicMeasure, GridMeasure, wasserstein  # noqa: F401
from .potential import Potential  # noqa: F401
