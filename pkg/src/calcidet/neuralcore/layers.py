"""Layer descriptions, parameter construction, and receptive-field arithmetic.

A network component is a plain sequence of LayerSpec entries. The same
sequence drives parameter allocation, the forward interpreter, the
architecture fingerprint, and the receptive-field recurrence, so the four
can never drift apart.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from ..errors import NeuralError
from . import tensor as T

SPATIAL_KINDS = {"conv2d", "maxpool2d"}
POINTWISE_KINDS = {"elu", "softmax", "dropout", "batchnorm", "concat"}
VALID_KINDS = SPATIAL_KINDS | POINTWISE_KINDS | {"dense", "flatten"}

WEIGHT_INIT_GAIN = np.sqrt(2.0)  # fan-in scaled uniform bound: gain * sqrt(3 / fan_in)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network component.

    kind: conv2d | maxpool2d | dense | elu | softmax | dropout | batchnorm
          | concat | flatten
    filters: output channels (conv2d)
    kernel: square kernel size (conv2d)
    dilation: tap spacing (conv2d)
    stride: window stride (maxpool2d)
    pool: window size (maxpool2d)
    units: output width (dense)
    drop_p: drop probability (dropout)
    """

    kind: str
    filters: int = 0
    kernel: int = 0
    dilation: int = 1
    stride: int = 1
    pool: int = 0
    units: int = 0
    drop_p: float = 0.0

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise NeuralError(f"unknown layer kind {self.kind!r}")
        if self.dilation < 1:
            raise NeuralError(f"dilation must be >= 1, got {self.dilation}")
        if self.kind == "conv2d" and (self.kernel < 1 or self.filters < 1):
            raise NeuralError("conv2d needs kernel >= 1 and filters >= 1")
        if self.kind == "maxpool2d" and (self.pool < 1 or self.stride < 1):
            raise NeuralError("maxpool2d needs pool >= 1 and stride >= 1")
        if self.kind == "dense" and self.units < 1:
            raise NeuralError("dense needs units >= 1")
        if self.kind == "dropout" and not 0.0 <= self.drop_p < 1.0:
            raise NeuralError(f"drop probability must be in [0, 1), got {self.drop_p}")


def conv(filters: int, kernel: int = 3, dilation: int = 1) -> LayerSpec:
    return LayerSpec(kind="conv2d", filters=filters, kernel=kernel, dilation=dilation)


def pool(size: int = 2, stride: int | None = None) -> LayerSpec:
    return LayerSpec(kind="maxpool2d", pool=size, stride=size if stride is None else stride)


def receptive_field(layers: list[LayerSpec]) -> tuple[int, int]:
    """Receptive field and output stride of a stack of spatial layers.

    rf grows by (effective_kernel - 1) * jump per layer, where the effective
    kernel of a dilated convolution is dilation * (kernel - 1) + 1; the jump
    multiplies by the layer stride. Pointwise layers contribute nothing.
    """
    rf, jump = 1, 1
    for layer in layers:
        if layer.kind == "conv2d":
            eff = layer.dilation * (layer.kernel - 1) + 1
            rf += (eff - 1) * jump
        elif layer.kind == "maxpool2d":
            rf += (layer.pool - 1) * jump
            jump *= layer.stride
        elif layer.kind in POINTWISE_KINDS:
            continue
        else:
            raise NeuralError(f"receptive_field is undefined for layer kind {layer.kind!r}")
    return rf, jump


def output_shape(layers: list[LayerSpec], in_channels: int,
                 in_hw: tuple[int, int] | None = None):
    """Walk (channels, height, width) through a layer sequence.

    Returns (channels, h, w) or, after a flatten layer, a single flat width.
    Spatial extents may be None when in_hw is not given (shape-agnostic
    pointwise analysis)."""
    c = in_channels
    hw = in_hw
    flat = None
    for layer in layers:
        if flat is not None and layer.kind not in ("dense", "dropout", "batchnorm", "elu", "softmax"):
            raise NeuralError(f"layer {layer.kind!r} after flatten")
        if layer.kind == "conv2d":
            c = layer.filters
            if hw is not None:
                span = layer.dilation * (layer.kernel - 1)
                hw = (hw[0] - span, hw[1] - span)
                if min(hw) < 1:
                    raise NeuralError("input too small for the convolution stack")
        elif layer.kind == "maxpool2d":
            if hw is not None:
                hw = ((hw[0] - layer.pool) // layer.stride + 1,
                      (hw[1] - layer.pool) // layer.stride + 1)
        elif layer.kind == "flatten":
            if hw is None:
                raise NeuralError("flatten requires known spatial extents")
            flat = c * hw[0] * hw[1]
        elif layer.kind == "dense":
            flat = layer.units
            c = layer.units
    if flat is not None:
        return flat
    return (c, hw[0], hw[1]) if hw is not None else (c, None, None)


def build_parameters(layers: list[LayerSpec], in_channels: int, prefix: str,
                     rng: np.random.Generator, dtype=np.float32,
                     in_hw: tuple[int, int] | None = None):
    """Allocate parameters and batchnorm buffers for a layer sequence.

    Weights are fan-in scaled uniform (bound gain * sqrt(3 / fan_in)), biases
    zero, batchnorm gamma 1 / beta 0 with zero-mean unit-variance running
    buffers. Returns (params, buffers) keyed by '<prefix>.<index>.<field>'.
    """
    params: dict[str, T.Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    c = in_channels
    hw = in_hw
    flat = None
    for i, layer in enumerate(layers):
        name = f"{prefix}.{i}"
        if layer.kind == "conv2d":
            fan_in = c * layer.kernel * layer.kernel
            bound = WEIGHT_INIT_GAIN * np.sqrt(3.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(layer.filters, c, layer.kernel, layer.kernel))
            params[f"{name}.weight"] = T.Tensor(w.astype(dtype), requires_grad=True,
                                                name=f"{name}.weight")
            params[f"{name}.bias"] = T.Tensor(np.zeros(layer.filters, dtype=dtype),
                                              requires_grad=True, name=f"{name}.bias")
            c = layer.filters
            if hw is not None:
                span = layer.dilation * (layer.kernel - 1)
                hw = (hw[0] - span, hw[1] - span)
        elif layer.kind == "maxpool2d":
            if hw is not None:
                hw = ((hw[0] - layer.pool) // layer.stride + 1,
                      (hw[1] - layer.pool) // layer.stride + 1)
        elif layer.kind == "batchnorm":
            width = flat if flat is not None else c
            params[f"{name}.gamma"] = T.Tensor(np.ones(width, dtype=dtype),
                                               requires_grad=True, name=f"{name}.gamma")
            params[f"{name}.beta"] = T.Tensor(np.zeros(width, dtype=dtype),
                                              requires_grad=True, name=f"{name}.beta")
            buffers[f"{name}.running_mean"] = np.zeros(width, dtype=np.float32)
            buffers[f"{name}.running_var"] = np.ones(width, dtype=np.float32)
        elif layer.kind == "flatten":
            if hw is None:
                raise NeuralError("flatten requires known spatial extents")
            flat = c * hw[0] * hw[1]
        elif layer.kind == "dense":
            fan_in = flat if flat is not None else c
            if fan_in is None:
                raise NeuralError("dense layer needs a known input width")
            bound = WEIGHT_INIT_GAIN * np.sqrt(3.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, layer.units))
            params[f"{name}.weight"] = T.Tensor(w.astype(dtype), requires_grad=True,
                                                name=f"{name}.weight")
            params[f"{name}.bias"] = T.Tensor(np.zeros(layer.units, dtype=dtype),
                                              requires_grad=True, name=f"{name}.bias")
            flat = layer.units
            c = layer.units
    return params, buffers


def run_layers(layers: list[LayerSpec], x: T.Tensor, params: dict, buffers: dict,
               prefix: str, training: bool = False,
               rng: np.random.Generator | None = None) -> T.Tensor:
    """Execute a layer sequence on a batch tensor."""
    out = x
    for i, layer in enumerate(layers):
        name = f"{prefix}.{i}"
        if layer.kind == "conv2d":
            out = T.conv2d(out, params[f"{name}.weight"], params[f"{name}.bias"],
                           dilation=layer.dilation)
        elif layer.kind == "maxpool2d":
            out = T.maxpool2d(out, layer.pool, layer.stride)
        elif layer.kind == "elu":
            out = T.elu(out)
        elif layer.kind == "softmax":
            out = T.softmax(out, axis=1)
        elif layer.kind == "dropout":
            out = T.dropout(out, layer.drop_p, training=training, rng=rng)
        elif layer.kind == "batchnorm":
            out = T.batchnorm(out, params[f"{name}.gamma"], params[f"{name}.beta"],
                              buffers[f"{name}.running_mean"], buffers[f"{name}.running_var"],
                              training=training)
        elif layer.kind == "flatten":
            out = T.flatten(out)
        elif layer.kind == "dense":
            out = T.dense(out, params[f"{name}.weight"], params[f"{name}.bias"])
        else:
            raise NeuralError(f"cannot execute layer kind {layer.kind!r}")
    return out


def parameter_count(layers: list[LayerSpec], in_channels: int,
                    in_hw: tuple[int, int] | None = None) -> int:
    """Number of trainable scalars a layer sequence allocates."""
    total = 0
    c = in_channels
    hw = in_hw
    flat = None
    for layer in layers:
        if layer.kind == "conv2d":
            total += layer.filters * c * layer.kernel * layer.kernel + layer.filters
            c = layer.filters
            if hw is not None:
                span = layer.dilation * (layer.kernel - 1)
                hw = (hw[0] - span, hw[1] - span)
        elif layer.kind == "maxpool2d":
            if hw is not None:
                hw = ((hw[0] - layer.pool) // layer.stride + 1,
                      (hw[1] - layer.pool) // layer.stride + 1)
        elif layer.kind == "batchnorm":
            total += 2 * (flat if flat is not None else c)
        elif layer.kind == "flatten":
            flat = c * hw[0] * hw[1]
        elif layer.kind == "dense":
            total += (flat if flat is not None else c) * layer.units + layer.units
            flat = layer.units
            c = layer.units
    return total


def architecture_fingerprint(components: dict[str, list[LayerSpec]],
                             extra: dict | None = None) -> str:
    """Stable hash of the named layer sequences (plus fixed structural facts)."""
    doc = {
        name: [
            {k: getattr(layer, k) for k in
             ("kind", "filters", "kernel", "dilation", "stride", "pool", "units", "drop_p")}
            for layer in layers
        ]
        for name, layers in components.items()
    }
    if extra:
        doc["_structure"] = extra
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()
