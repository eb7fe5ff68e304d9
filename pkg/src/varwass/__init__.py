"""Variable-exponent Wasserstein machinery on 1-D finite-volume grids.

The package provides Luxemburg norms for variable-exponent Lebesgue spaces,
a static transport problem with the asymmetric cost
|x - y|^p(x) / (h^(p(x)-1) p(x)), a minimizing-movement scheme driven by that
cost, an explicit finite-volume solver for the matching variable-exponent
diffusion equation, and the discrete Finsler tangent-norm apparatus that ties
the two together.
"""

__version__ = "0.1.0"

from . import energy, finsler, grid, jko, pde, transport, varexp
from .errors import VarwassError

__all__ = [
    "energy",
    "errors",
    "finsler",
    "grid",
    "jko",
    "pde",
    "transport",
    "varexp",
    "VarwassError",
    "__version__",
]
