"""Python bindings for the hidformer forecaster."""

from ._core import *  # noqa: F401,F403
from ._core import (
    ConfigError,
    ContractError,
    CorruptionError,
    DataError,
    HidformerError,
    NumericError,
)

__version__ = "0.1.0"
