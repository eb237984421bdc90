"""Tensor engine: reverse-mode autodiff over float32 numpy arrays.

Public surface re-exported here; see tensor.py for the engine contract.
"""

from .conv import conv3d, conv3d_cl
from .io import load_mxt, save_mxt
from .nn import batchnorm, batchnorm_inference, cosine_similarity, global_avg_pool, linear, softmax
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    add_const,
    backward,
    concat,
    embedding,
    exp,
    log,
    mean,
    mean_all,
    mul,
    relu,
    reshape,
    row,
    scale,
    sub,
    sum_axis,
    take_per_row,
    transpose,
)

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "add_const",
    "backward",
    "batchnorm",
    "batchnorm_inference",
    "concat",
    "conv3d",
    "conv3d_cl",
    "cosine_similarity",
    "embedding",
    "exp",
    "global_avg_pool",
    "linear",
    "load_mxt",
    "log",
    "mean",
    "mean_all",
    "mul",
    "relu",
    "reshape",
    "row",
    "save_mxt",
    "scale",
    "softmax",
    "sub",
    "sum_axis",
    "take_per_row",
    "transpose",
]
