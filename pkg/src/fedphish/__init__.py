"""Federated continual learning simulator for URL-based phishing detection."""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    FedPhishError,
    NumericError,
    ProtocolError,
    UsageError,
)

__all__ = [
    "ConfigurationError", "DataError", "DimensionError", "FedPhishError",
    "NumericError", "ProtocolError", "UsageError", "__version__",
]
