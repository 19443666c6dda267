"""Texture synthesis GAN with multi-scale texton broadcasting."""

from texsyn.errors import ConfigError, DataError, IntegrityError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "IntegrityError", "NumericalError", "__version__"]
