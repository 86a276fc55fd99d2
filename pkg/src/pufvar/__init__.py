"""Delay-PUF within-die variance analysis with a ground-truth delay simulator."""

from .errors import NegativeEstimateWarning, ParseError, PufVarError

__version__ = "0.1.0"

__all__ = ["PufVarError", "ParseError", "NegativeEstimateWarning", "__version__"]
