"""Semi-supervised multi-label feature selection with a learned sample graph."""

from .data import Dataset, DataFormatError, SemiSplit, load_csv, load_mulan, make_split, standardize
from .graph import SparseGraph, SplitPair, build_splits, init_graph, update_graph
from .solver import (
    FeatureRanking,
    IllConditionedError,
    SgmfsConfig,
    SolverState,
    fit,
    select_features,
)
from .subspace import build_c_matrix, compute_p, update_q

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DataFormatError",
    "SemiSplit",
    "load_csv",
    "load_mulan",
    "make_split",
    "standardize",
    "SparseGraph",
    "SplitPair",
    "build_splits",
    "init_graph",
    "update_graph",
    "build_c_matrix",
    "compute_p",
    "update_q",
    "FeatureRanking",
    "IllConditionedError",
    "SgmfsConfig",
    "SolverState",
    "fit",
    "select_features",
]
