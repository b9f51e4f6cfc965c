"""mkin: Madelung quantum fluid fields, inverse kinetic closures and
weighted-particle phase-space tracing for Schrodinger dynamics."""

__version__ = "0.1.0"

from .errors import ConfigError, Rejection

__all__ = ["ConfigError", "Rejection", "__version__"]
