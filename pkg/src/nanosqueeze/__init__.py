"""Squeezed resonance fluorescence of a quantum emitter near a metal nanosphere.

Submodules: ``materials`` (Drude-Lorentz permittivity), ``specfun`` (Riccati
Bessel machinery), ``green`` (Mie dyadic Green tensor), ``contour``
(imaginary-axis quadrature), ``emitter`` (dressed rates and Bloch states),
``squeeze`` (amplitudes, variances, homodyne) and ``scan`` (pipelines).
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    ConvergenceError,
    DomainError,
    FitError,
    InvalidModelError,
    NanosqueezeError,
)
from .green import SphereSystem  # noqa: F401
from .emitter import Emitter  # noqa: F401
