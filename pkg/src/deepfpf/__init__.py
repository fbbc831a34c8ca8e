"""Neural-network approximation of the feedback particle filter gain.

Modules: ``density`` (models and quadrature ground truth), ``nn`` (network
and double backprop), ``train`` (Adam training), ``baselines`` (Galerkin and
diffusion map), ``flow`` (homotopy particle flow), ``bench`` (experiments)
and ``cli``.
"""

from .errors import ConfigError, DomainError, FitError, NumericError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DomainError", "FitError", "NumericError", "__version__"]
