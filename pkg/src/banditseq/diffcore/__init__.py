"""Minimal reverse-mode autodiff, parameters, Adam, RNG, gradient checking."""

from .graph import (
    AttendNode,
    Node,
    add,
    add_n,
    affine,
    attend,
    backward,
    concat,
    constant,
    leaf,
    log,
    log_softmax,
    lstm_c,
    lstm_gates,
    lstm_h,
    matmul,
    matvec_t,
    mul,
    pick,
    row,
    set_debug_checks,
    sigmoid,
    softmax,
    softmax_values,
    square,
    stack_rows,
    sum_all,
    tanh,
    vslice,
)
from .gradcheck import FiniteDiffReport, finite_diff_check
from .optim import Adam
from .params import ParamStore
from .rng import RandomStream, seeded_rng

__all__ = [
    "Adam",
    "AttendNode",
    "FiniteDiffReport",
    "Node",
    "ParamStore",
    "RandomStream",
    "add",
    "add_n",
    "affine",
    "attend",
    "backward",
    "concat",
    "constant",
    "finite_diff_check",
    "leaf",
    "log",
    "log_softmax",
    "lstm_c",
    "lstm_gates",
    "lstm_h",
    "matmul",
    "matvec_t",
    "mul",
    "pick",
    "row",
    "seeded_rng",
    "set_debug_checks",
    "sigmoid",
    "softmax",
    "softmax_values",
    "square",
    "stack_rows",
    "sum_all",
    "tanh",
    "vslice",
]
