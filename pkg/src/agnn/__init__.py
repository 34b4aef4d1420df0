"""Asymmetric graph neural networks for directed graphs.

Each node carries an outgoing embedding and an incoming embedding that are
propagated by a pair of normalized operators, with an optional edge-likelihood
regularizer tying the two embeddings to the observed edges.
"""

from agnn.errors import (
    AgnnError,
    ConfigError,
    ContractError,
    DimensionError,
    InputError,
    NonFiniteError,
)

__version__ = "0.1.0"

__all__ = [
    "AgnnError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "InputError",
    "NonFiniteError",
    "__version__",
]
