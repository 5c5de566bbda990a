"""Kinetic entropy and long-time behaviour of degenerate mean-field diffusions.

Subpackages:

- ``kel.model``: block models, structural conditions, closed-form constants, presets
- ``kel.sde``: Euler-Maruyama particle systems, synchronous coupling, snapshot I/O
- ``kel.gaussian``: exact Gaussian laws of linear models
- ``kel.transport``: exact and entropic W2
- ``kel.entropy``: sample-based relative entropy estimators
- ``kel.gramian``: flow matrices and the weighted controllability Gramian
- ``kel.experiments``: composed experiments and reports
- ``kel.cli``: command-line entry point
"""

__version__ = "0.1.0"

from .errors import KelError, NumericalError, ValidationError  # noqa: E402
from .model import BlockModel, kappa, preset  # noqa: E402

__all__ = ["__version__", "KelError", "NumericalError", "ValidationError", "BlockModel",
           "kappa", "preset"]
