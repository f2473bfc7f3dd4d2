"""Geodesic flows on negatively curved manifolds: Jacobi/Riccati dynamics,
Lyapunov spectra and contraction-rate rigidity experiments."""

from ._kernels import BACKEND  # noqa: F401
from .errors import LabError  # noqa: F401
from .metric_models import (  # noqa: F401
    ConformalPerturbed,
    CustomChart,
    Hyperbolic,
    WarpedProduct,
    curvature_bounds,
    model_from_spec,
)

__version__ = "0.1.0"
