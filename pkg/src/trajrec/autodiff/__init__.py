"""Minimal reverse-mode autodiff: tensors, ops, Adam, and checks."""

from .checkpoint import load_arrays, save_arrays
from .gradcheck import grad_check
from .optim import AdamState, adam_step, clip_grad_norm, zero_grads
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    constant,
    div,
    exp,
    expand,
    gather,
    grad_enabled,
    leaky_relu,
    log,
    masked_fill,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    scatter_add,
    sigmoid,
    softmax,
    sqrt,
    sub,
    tanh,
    tmean,
    transpose,
    tsum,
    uniform_param,
    zeros_param,
)

__all__ = [
    "AdamState", "Tensor", "adam_step", "add", "as_tensor", "clip_grad_norm",
    "concat", "constant", "div", "exp", "expand", "gather", "grad_check",
    "grad_enabled", "leaky_relu", "load_arrays", "log", "masked_fill",
    "matmul", "mul", "no_grad", "relu", "reshape", "save_arrays",
    "scatter_add", "sigmoid", "softmax", "sqrt", "sub", "tanh", "tmean",
    "transpose", "tsum", "uniform_param", "zero_grads", "zeros_param",
]
