"""Adjoint LSTM forecaster for building indoor temperature with calendar-aware
ancillary network and Monte-Carlo dropout intervals."""

from .exceptions import (
    AdjointNetError,
    ContractError,
    DataFormatError,
    DimensionError,
    DomainError,
    TrainingError,
    ValidationError,
)
from .model import AdjointForecaster, combine
from .uncertainty import ForecastWithCI, SampleSet, coverage, derive_ci, mc_sample

__version__ = "0.1.0"

__all__ = [
    "AdjointForecaster",
    "AdjointNetError",
    "ContractError",
    "DataFormatError",
    "DimensionError",
    "DomainError",
    "ForecastWithCI",
    "SampleSet",
    "TrainingError",
    "ValidationError",
    "combine",
    "coverage",
    "derive_ci",
    "mc_sample",
]
