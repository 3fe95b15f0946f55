"""Deep Random key agreement with an authenticated extension, simulated end to end."""

from .core import ProtocolParams, RandomnessSource, ParameterError, DimensionError

__version__ = "0.1.0"

__all__ = ["ProtocolParams", "RandomnessSource", "ParameterError", "DimensionError", "__version__"]
