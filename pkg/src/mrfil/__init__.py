"""Imitation learning with an ensemble-disagreement reward, plus exact tabular checks."""

from .errors import ConfigError, MissingArtifactError, MrfilError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "MissingArtifactError", "MrfilError", "NumericalError", "__version__"]
