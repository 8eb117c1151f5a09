"""Topology-aware robust optimization over data groups.

Learns or ingests a graph over groups, turns group betweenness into a prior
over training groups, and trains predictors with a prior-anchored primal-dual
method. ERM, Group DRO and importance-weighted ERM are included as baselines.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateDataError,
    FormatError,
    InvalidInputError,
    TroError,
    UnsupportedError,
)

__all__ = [
    "ConfigError",
    "DegenerateDataError",
    "FormatError",
    "InvalidInputError",
    "TroError",
    "UnsupportedError",
    "__version__",
]
