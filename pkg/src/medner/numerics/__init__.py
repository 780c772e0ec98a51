from medner.numerics.tensor import (
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    concat,
    div,
    dropout,
    embedding_lookup,
    exp,
    gelu,
    getitem,
    layer_norm,
    log,
    log_softmax,
    log_sum_exp,
    masked_fill,
    matmul,
    mean,
    mul,
    neg,
    recording,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
    where,
)
from medner.numerics.optim import (
    Adam, AdamState, OptimizerConfig, adam_step, clip_grad_norm, default_no_decay, lr_schedule,
)
from medner.numerics.random import derive_rng
from medner.numerics.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from medner.numerics.gradcheck import gradcheck, max_relative_error, numerical_gradient
from medner.numerics.nn import Linear, Module

__all__ = [name for name in dir() if not name.startswith("_")]
