"""Spatially-sparse convolutional networks with ground-state memoization."""

from .grid import SparseBatch, SparseGrid
from .layers import ConvLayer, OutputLayer, PoolLayer
from .network import (NetworkSpec, ParamSet, build_deepcnet, build_deepcnin, census_forward, count_paths,
                      init_params, parameter_count)

__all__ = [
    "SparseGrid", "SparseBatch", "ConvLayer", "PoolLayer", "OutputLayer", "NetworkSpec", "ParamSet",
    "build_deepcnet", "build_deepcnin", "parameter_count", "count_paths", "census_forward", "init_params",
]
__version__ = "0.1.0"
