"""earthmodes: spectral-Galerkin oscillations of layered, rotating,
self-gravitating planet models with fluid and solid layers."""

__version__ = "0.1.0"

from .kernels import BACKEND as kernel_backend  # noqa: F401
