"""Numerical inversion of the geodesic ray transform on simple conformal disks."""

from . import geodesic, grids, inversion, jacobi, metric, phantoms, transforms
from .errors import (ConfigError, ConjugatePointError, DivergenceRiskError, DomainError,
                     GeoXrayError, InversionFailureError, OutOfManifoldError, TrappedRayError)

__version__ = "0.1.0"
