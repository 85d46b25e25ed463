"""Parallel MM clustering with lossless triangle-inequality pruning."""
from .core import (CentroidSet, DataMatrix, MixtureSpec, cosine_dissimilarity, euclidean,
                   generate_mixture, load_matrix, normalize_rows, save_matrix, sse)
from .engine import EngineConfig, run_mm

__version__ = "0.1.0"
