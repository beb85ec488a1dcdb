"""Minimal differentiable tensor engine: layers, losses, optimizer, and
receptive-field arithmetic for the two classification networks."""

from .gradcheck import GradCheckResult, grad_check
from .layers import (
    LayerSpec,
    architecture_fingerprint,
    build_parameters,
    output_shape,
    parameter_count,
    receptive_field,
    run_layers,
)
from .optim import AdamOptimizer
from .tensor import (
    Tensor,
    add,
    backward,
    batchnorm,
    concat,
    conv2d,
    crop2d,
    cross_entropy,
    dense,
    dropout,
    elu,
    flatten,
    grad_enabled,
    maxpool2d,
    no_grad,
    scale,
    softmax,
)
from .weights import NetworkWeights, load_weights, save_weights

__all__ = [
    "AdamOptimizer",
    "GradCheckResult",
    "LayerSpec",
    "NetworkWeights",
    "Tensor",
    "add",
    "architecture_fingerprint",
    "backward",
    "batchnorm",
    "build_parameters",
    "concat",
    "conv2d",
    "crop2d",
    "cross_entropy",
    "dense",
    "dropout",
    "elu",
    "flatten",
    "grad_check",
    "grad_enabled",
    "load_weights",
    "maxpool2d",
    "no_grad",
    "output_shape",
    "parameter_count",
    "receptive_field",
    "run_layers",
    "save_weights",
    "scale",
    "softmax",
]
