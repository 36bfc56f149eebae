"""Steady-state critical points and exponents of dissipative spin lattices.

Cluster mean-field Lindblad dynamics on the 2D square lattice, susceptibility
extraction by linear response, and coherent-anomaly scaling of the per-cluster
singularities to the true critical point and exponent.
"""

from spincam.lattice import ClusterGeometry, build_cluster
from spincam.operators import ModelSpec, Probe
from spincam.errors import (
    CapacityError,
    FitError,
    PreconditionError,
    SolverError,
)

__version__ = "0.1.0"
