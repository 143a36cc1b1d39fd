"""Minimal tensor math, reverse-mode autodiff, and neural layers."""

from . import kernels
from .gradcheck import check_gradients, numeric_grad, relative_error
from .layers import (
    Embedding,
    Linear,
    LSTMCell,
    Module,
    attend,
    dot_attention,
    init_range,
    init_reference,
    lstm_step,
)
from .tensor import (
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    concat,
    embedding,
    exp,
    getitem,
    log,
    log_softmax,
    logaddexp,
    lstm_cell,
    lstm_sequence,
    matmul,
    mul,
    no_grad,
    reshape,
    set_check_finite,
    sigmoid,
    softmax,
    stack,
    sub,
    swap_last,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "kernels",
    "check_gradients",
    "numeric_grad",
    "relative_error",
    "Embedding",
    "Linear",
    "LSTMCell",
    "Module",
    "attend",
    "dot_attention",
    "init_range",
    "init_reference",
    "lstm_step",
    "NonFiniteError",
    "Tensor",
    "add",
    "as_tensor",
    "concat",
    "embedding",
    "exp",
    "getitem",
    "log",
    "log_softmax",
    "logaddexp",
    "lstm_cell",
    "lstm_sequence",
    "matmul",
    "mul",
    "no_grad",
    "reshape",
    "set_check_finite",
    "sigmoid",
    "softmax",
    "stack",
    "sub",
    "swap_last",
    "tanh",
    "transpose",
    "tsum",
]
