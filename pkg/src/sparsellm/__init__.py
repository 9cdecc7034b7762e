"""Adaptive global pruning of layered networks via auxiliary-variable splitting.

Modules
-------
numkit      dense numerical kernels (pseudo-inverse, SPD solves, masked
            least squares, bracketed scalar minimization)
kernels     per-entry update kernels, compiled extension with pure-NumPy
            fallback selected at import
netmodel    network description, forward recording, container I/O, fixtures
localprune  layer-wise pruning (scores, masks, weight reconstruction)
solver      alternating global FFN-block pruning and network orchestration
evalkit     metrics and structured reports
cli         command-line entry point
"""

from . import evalkit, kernels, localprune, netmodel, numkit, solver
from .errors import (
    ConfigError,
    FormatError,
    InvalidInputError,
    NumericalError,
    ShapeError,
    SparseLLMError,
)
from .localprune import Mask, SemiStructured, Unstructured
from .netmodel import (
    BlockSpec,
    CalibrationSet,
    NetworkSpec,
    forward,
    forward_record,
    load_calibration,
    load_model,
    save_calibration,
    save_model,
    synthesize_fixture,
)
from .solver import PruneConfig, prune_block_global, prune_network

__version__ = "0.1.0"
