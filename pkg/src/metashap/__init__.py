"""Band-gap QoIs, Shapley dominance analysis and regression surrogates for
layered phononic metamaterials."""

from metashap.errors import DomainError, FormatError

__version__ = "0.1.0"

__all__ = ["DomainError", "FormatError", "__version__"]
