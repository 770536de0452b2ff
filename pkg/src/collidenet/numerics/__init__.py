from .core import (
    DTYPE,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    count_flops,
    current_tape,
    div,
    dropout,
    exp,
    gelu,
    getitem,
    grad_enabled,
    layer_norm,
    log,
    matmul,
    maximum,
    mean,
    moving_average,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    softmax,
    sqrt,
    square,
    stack,
    sub,
    swapaxes,
    take,
    tanh,
    tensor,
    transpose,
    tsum,
)
from .nn import FeedForward, LayerNorm, Linear, Module, parameter
from .tensorio import decode_tensor, encode_tensor, load_tensor, save_tensor
