from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam, AdamState, adam_step, grad_norm
from .rng import Rng
from .tensor import (Node, Tensor, add, backward, concat, constant, exp, expand, gather, layer_norm,
                     matmul, mean, mse, mul, parameter, precision, reshape, scale, silu, softmax,
                     stop_gradient, sub, sum_, take, transpose)

__all__ = [
    "Adam", "AdamState", "Node", "Rng", "Tensor", "adam_step", "add", "backward", "concat",
    "constant", "exp", "expand", "gather", "grad_norm", "layer_norm", "load_checkpoint", "matmul", "mean",
    "mse", "mul", "parameter", "precision", "reshape", "save_checkpoint", "scale", "silu",
    "softmax", "stop_gradient", "sub", "sum_", "take", "transpose",
]
