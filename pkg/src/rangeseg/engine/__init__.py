"""Dense-tensor substrate: autodiff core, NN operators, layers, checkpoints."""

from .checkpoint import load_arrays, save_arrays
from .gradcheck import finite_diff_check, parameter_gradient_check
from .modules import SGD, BatchNorm2d, Conv2d, Module, kaiming_uniform
from .ops import (
    ConvSpec,
    avg_pool2d,
    batch_norm,
    conv2d,
    dropout,
    log_softmax,
    max_pool2d,
    nearest_upsample2d,
    softmax,
)
from .tensor import (
    ShapeError,
    Tensor,
    absolute,
    astensor,
    concat,
    leaky_relu,
    matmul,
    maximum,
    no_grad,
    sigmoid,
    stop_gradient,
    tensor_max,
    tensor_mean,
    tensor_sum,
)

__all__ = [
    "SGD",
    "BatchNorm2d",
    "Conv2d",
    "ConvSpec",
    "Module",
    "ShapeError",
    "Tensor",
    "absolute",
    "astensor",
    "avg_pool2d",
    "batch_norm",
    "concat",
    "conv2d",
    "dropout",
    "finite_diff_check",
    "kaiming_uniform",
    "leaky_relu",
    "load_arrays",
    "log_softmax",
    "matmul",
    "max_pool2d",
    "maximum",
    "nearest_upsample2d",
    "no_grad",
    "parameter_gradient_check",
    "save_arrays",
    "sigmoid",
    "softmax",
    "stop_gradient",
    "tensor_max",
    "tensor_mean",
    "tensor_sum",
]
