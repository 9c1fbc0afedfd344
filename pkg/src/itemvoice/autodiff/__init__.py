"""A small reverse-mode autodiff engine sized for the item models."""

from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .functional import (
    batch_norm,
    conv2d,
    dropout,
    global_avg_pool,
    log_softmax,
    lstm_step,
    mse_loss,
    nll_loss,
    softmax,
)
from .optim import Adam, AdamConfig, AdamState, adam_step, make_rng
from .tensor import (
    Tensor,
    add,
    concat,
    flatten,
    gather_rows,
    linear,
    matmul,
    mean_all,
    mean_of,
    mul,
    relu,
    reshape,
    sigmoid,
    sub,
    sum_all,
    tanh,
)

__all__ = [
    "Adam",
    "AdamConfig",
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "batch_norm",
    "concat",
    "conv2d",
    "decode_checkpoint",
    "dropout",
    "encode_checkpoint",
    "flatten",
    "gather_rows",
    "global_avg_pool",
    "linear",
    "load_checkpoint",
    "log_softmax",
    "lstm_step",
    "make_rng",
    "matmul",
    "mean_all",
    "mean_of",
    "mse_loss",
    "mul",
    "nll_loss",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "sub",
    "sum_all",
    "tanh",
]
